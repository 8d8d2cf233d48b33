#ifndef DPGPLVM_OBJECTIVE_HPP_
#define DPGPLVM_OBJECTIVE_HPP_

#include "dpgplvm/dp_bound.hpp"
#include "dpgplvm/gp_bound.hpp"
#include "dpgplvm/parallel.hpp"
#include "dpgplvm/transform.hpp"

#include <optional>

namespace dpgplvm {

struct ElboReport {
  double total = 0.0;
  GPBoundBreakdown gp;
  DPBoundBreakdown dp;
  double hyperprior = 0.0;
  std::size_t iter = 0;
};

/// Sum of standard log-Normal log densities over every ARD weight, signal
/// variance and noise precision.
inline double hyperprior_log_density(const ComponentParams &c) {
  double total = 0.0;
  auto add = [&total](double theta) {
    if (!(theta > 0.0))
      throw InputError("hyperprior: parameters must be positive");
    const double u = std::log(theta);
    total += -u - 0.5 * u * u - 0.5 * kLog2Pi;
  };
  for (Index k = 0; k < c.t(); ++k) {
    for (Index q = 0; q < c.ard.cols(); ++q)
      add(c.ard(k, q));
    add(c.signal_var[k]);
    add(c.noise_prec[k]);
  }
  return total;
}

/// Gradient of the ELBO with respect to constrained parameters.
struct StateGradient {
  Matrix mu, sigma, xu;
  Vector signal_var;
  Matrix ard;
  Vector noise_prec;
  DPGradient dp;
};

namespace detail {

inline DPBoundBreakdown dp_part(const ModelState &s) {
  if (s.mode == ModelMode::kBgpLvm)
    return {};
  return dp_lower_bound(s.dp, s.config.s1, s.config.s2);
}

/// Back-propagates dL/dPsi1 of component k into the latent and kernel
/// parameters.
inline void backprop_psi1(const ModelState &s, Index k, const Matrix &psi1v,
                          const Matrix &g1, StateGradient &g) {
  const auto &l = s.latent;
  const Vector gamma = s.components.ard.row(k).transpose();
  double d_log_s2 = 0.0;
  for (Index i = 0; i < l.n(); ++i)
    for (Index j = 0; j < l.m(); ++j) {
      const double w = g1(i, j) * psi1v(i, j);
      if (w == 0.0)
        continue;
      d_log_s2 += w;
      for (Index q = 0; q < l.q(); ++q) {
        const double gq = gamma[q];
        const double s_iq = l.sigma(i, q);
        const double den = gq * s_iq + 1.0;
        const double diff = l.mu(i, q) - l.xu(j, q);
        const double t1 = gq * diff / den;
        g.mu(i, q) -= w * t1;
        g.xu(j, q) += w * t1;
        g.sigma(i, q) += w * (-0.5 * gq / den + 0.5 * t1 * t1);
        g.ard(k, q) += w * (-0.5 * s_iq / den - 0.5 * diff * diff / (den * den));
      }
    }
  g.signal_var[k] += d_log_s2 / s.components.signal_var[k];
}

/// Back-propagates dL/dPsi2 of component k; sample i receives
/// g2 - g2_missing[i] (g2_missing may be empty or hold empty matrices).
inline void backprop_psi2(const ModelState &s, Index k, const Matrix &g2,
                          const std::vector<Matrix> &g2_missing,
                          StateGradient &g) {
  using Eigen::ArrayXXd;
  const auto &l = s.latent;
  const Index m = l.m();
  const Index qd = l.q();
  const Vector gamma = s.components.ard.row(k).transpose();
  const double s2 = s.components.signal_var[k];
  const auto geo = psi2_geometry(l.xu, s2, gamma);
  const ArrayXXd g2_sym = (0.5 * (g2 + g2.transpose())).array();
  ArrayXXd w_total = ArrayXXd::Zero(m, m);
  ArrayXXd p, w, cen, wr;
  double d_log_s2 = 0.0;
  for (Index i = 0; i < l.n(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    psi2_sample_into(l, i, gamma, geo, p);
    if (!g2_missing.empty() && g2_missing[iu].size() != 0) {
      const Matrix &c = g2_missing[iu];
      w = (g2_sym - 0.5 * (c + c.transpose()).array()) * p;
    } else {
      w = g2_sym * p;
    }
    const double w_sum = w.sum();
    d_log_s2 += 2.0 * w_sum;
    w_total += w;
    for (Index q = 0; q < qd; ++q) {
      const auto qu = static_cast<std::size_t>(q);
      const double gq = gamma[q];
      const double den = 2.0 * gq * l.sigma(i, q) + 1.0;
      cen = l.mu(i, q) - geo.mid[qu];
      wr = w * cen * (gq / den);
      const double wr_sum = wr.sum();
      const double wcc = (w * cen.square()).sum();
      g.mu(i, q) -= 2.0 * wr_sum;
      g.sigma(i, q) += -gq / den * w_sum + 2.0 * gq * gq / (den * den) * wcc;
      g.ard(k, q) += -l.sigma(i, q) / den * w_sum - wcc / (den * den);
      g.xu.col(q) += 2.0 * wr.rowwise().sum().matrix();
    }
  }
  for (Index q = 0; q < qd; ++q) {
    const auto qu = static_cast<std::size_t>(q);
    const ArrayXXd wg = w_total * geo.gap[qu];
    g.ard(k, q) -= 0.25 * (wg * geo.gap[qu]).sum();
    g.xu.col(q) -= gamma[q] * wg.rowwise().sum().matrix();
  }
  g.signal_var[k] += d_log_s2 / s2;
}

inline void backprop_kuu(const ModelState &s, Index k, const Matrix &kuu,
                         const Matrix &gk, StateGradient &g) {
  const auto &l = s.latent;
  double d_log_s2 = 0.0;
  for (Index j = 0; j < l.m(); ++j)
    for (Index jp = 0; jp < l.m(); ++jp) {
      const double w = gk(j, jp) * kuu(j, jp);
      if (w == 0.0)
        continue;
      d_log_s2 += w;
      for (Index q = 0; q < l.q(); ++q) {
        const double gq = s.components.ard(k, q);
        const double gap = l.xu(j, q) - l.xu(jp, q);
        g.ard(k, q) += w * (-0.5 * gap * gap);
        g.xu(j, q) -= w * gq * gap;
        g.xu(jp, q) += w * gq * gap;
      }
    }
  g.signal_var[k] += d_log_s2 / s.components.signal_var[k];
}

} // namespace detail

/// Full objective, optionally with its gradient in constrained coordinates.
struct Evaluation {
  ElboReport report;
  std::optional<StateGradient> gradient;
  /// F_{d,t} per dimension and component (expected bound form only).
  Matrix f_components;
};

namespace detail {

/// Gradient accumulators for one component's statistics.
struct ComponentAccumulator {
  Matrix g1, g2, gk;
  /// Per-sample Psi2 corrections for rows missing in some column: sample
  /// i's gradient is g2 - g2_missing[i].
  std::vector<Matrix> g2_missing;
  double d_signal_var = 0.0;
  double d_noise = 0.0;

  ComponentAccumulator(Index n, Index m, bool complete)
      : g1(Matrix::Zero(n, m)), g2(Matrix::Zero(m, m)), gk(Matrix::Zero(m, m)),
        g2_missing(complete ? 0 : static_cast<std::size_t>(n)) {}

  /// Adds scale * batch gradient for statistics over the observed rows of
  /// column `d` (or all rows when d < 0).
  void add(const FreeEnergyBatch &batch, double scale, const DataMatrix &y,
           Index d) {
    // psi0 = N_obs * sigma2
    const Index n_obs = batch.d_psi1.rows();
    d_signal_var += scale * batch.d_psi0 * static_cast<double>(n_obs);
    d_noise += scale * batch.d_beta;
    gk += scale * batch.d_kuu;
    g2 += scale * batch.d_psi2;
    if (d < 0) {
      g1 += scale * batch.d_psi1;
      return;
    }
    Index row = 0;
    for (Index i = 0; i < y.rows(); ++i) {
      if (y.mask(i, d)) {
        g1.row(i) += scale * batch.d_psi1.row(row++);
      } else {
        auto &corr = g2_missing[static_cast<std::size_t>(i)];
        if (corr.size() == 0)
          corr = Matrix::Zero(g2.rows(), g2.cols());
        corr += scale * batch.d_psi2;
      }
    }
  }
};

inline StateGradient zero_gradient(const ModelState &s) {
  const Index n = s.latent.n(), q = s.latent.q(), m = s.latent.m(), t = s.t();
  StateGradient g;
  g.mu = Matrix::Zero(n, q);
  g.sigma = Matrix::Zero(n, q);
  g.xu = Matrix::Zero(m, q);
  g.signal_var = Vector::Zero(t);
  g.ard = Matrix::Zero(t, q);
  g.noise_prec = Vector::Zero(t);
  return g;
}

/// Pushes component k's accumulated statistic gradients into `g`.
inline void backprop_component(const ModelState &s, const ComponentCache &cache,
                               Index k, const ComponentAccumulator &acc,
                               StateGradient &g) {
  const auto ku = static_cast<std::size_t>(k);
  g.signal_var[k] += acc.d_signal_var;
  g.noise_prec[k] += acc.d_noise;
  backprop_psi1(s, k, cache.full[ku].psi1, acc.g1, g);
  backprop_psi2(s, k, acc.g2, acc.g2_missing, g);
  backprop_kuu(s, k, cache.kuu[ku], acc.gk, g);
}

inline void add_into(StateGradient &total, const StateGradient &part) {
  total.mu += part.mu;
  total.sigma += part.sigma;
  total.xu += part.xu;
  total.signal_var += part.signal_var;
  total.ard += part.ard;
  total.noise_prec += part.noise_prec;
}

inline std::vector<Index> complete_columns(const DataMatrix &y) {
  std::vector<Index> out;
  for (Index d = 0; d < y.cols(); ++d)
    if (y.column_complete(d))
      out.push_back(d);
  return out;
}

} // namespace detail

/// Mixed (phi-weighted) statistics for dimension d over its observed rows.
inline MixedStats dimension_stats(const ComponentCache &cache,
                                  const ModelState &s, const DataMatrix &y,
                                  Index d) {
  std::vector<PsiStats> restricted;
  restricted.reserve(static_cast<std::size_t>(s.t()));
  for (Index k = 0; k < s.t(); ++k)
    restricted.push_back(cache.restricted(y, d, k, s));
  return mixture_stats(s.dp.phi.row(d).transpose(), restricted, cache.kuu,
                       s.components.noise_prec);
}

inline Evaluation evaluate(const ModelState &s, const DataMatrix &y,
                           bool with_gradient) {
  detail::check_consistent(s, y);
  const bool complete = y.complete();
  const auto cache = ComponentCache::build(s, !complete);
  const Index n = s.latent.n(), m = s.latent.m();
  const Index t = s.t(), dims = y.cols();
  const double jitter = s.config.jitter;
  const auto full_cols = detail::complete_columns(y);

  Evaluation ev;
  auto &r = ev.report;
  r.gp.f_per_dim = Vector::Zero(dims);
  Matrix d_phi = Matrix::Zero(dims, t);
  std::vector<detail::ComponentAccumulator> acc;
  if (with_gradient)
    acc.assign(static_cast<std::size_t>(t),
               detail::ComponentAccumulator(n, m, complete));

  if (s.config.bound == BoundForm::kExpected) {
    Matrix f = Matrix::Zero(dims, t);
    parallel_for(static_cast<std::size_t>(t), [&](std::size_t ku) {
      const auto k = static_cast<Index>(ku);
      const double beta = s.components.noise_prec[k];
      std::vector<Index> cols;
      for (Index d : full_cols)
        if (s.dp.phi(d, k) > 0.0)
          cols.push_back(d);
      if (!cols.empty()) {
        Matrix yc(n, static_cast<Index>(cols.size()));
        Vector w(static_cast<Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) {
          yc.col(static_cast<Index>(c)) = y.values.col(cols[c]);
          w[static_cast<Index>(c)] = s.dp.phi(cols[c], k);
        }
        const auto batch = free_energy_batch(yc, cache.full[ku], cache.kuu[ku],
                                             beta, jitter, w, with_gradient);
        for (std::size_t c = 0; c < cols.size(); ++c)
          f(cols[c], k) = batch.values[static_cast<Index>(c)];
        if (with_gradient)
          acc[ku].add(batch, 1.0, y, -1);
      }
      for (Index d = 0; d < dims; ++d) {
        if (y.column_complete(d) || s.dp.phi(d, k) == 0.0)
          continue;
        const PsiStats rs = cache.restricted(y, d, k, s);
        Vector w(1);
        w[0] = s.dp.phi(d, k);
        const auto batch =
            free_energy_batch(detail::observed_column(y, d), rs, cache.kuu[ku],
                              beta, jitter, w, with_gradient);
        f(d, k) = batch.values[0];
        if (with_gradient)
          acc[ku].add(batch, 1.0, y, d);
      }
    });
    for (Index d = 0; d < dims; ++d) {
      double fd = 0.0;
      for (Index k = 0; k < t; ++k)
        if (s.dp.phi(d, k) > 0.0)
          fd += s.dp.phi(d, k) * f(d, k);
      r.gp.f_per_dim[d] = fd;
    }
    d_phi = f;
    ev.f_components = std::move(f);
  } else {
    std::vector<FreeEnergyBatch> terms(static_cast<std::size_t>(dims));
    std::vector<std::vector<PsiStats>> restricted(static_cast<std::size_t>(dims));
    parallel_for(static_cast<std::size_t>(dims), [&](std::size_t du) {
      const auto d = static_cast<Index>(du);
      auto &per = restricted[du];
      for (Index k = 0; k < t; ++k)
        per.push_back(cache.restricted(y, d, k, s));
      const auto mixed =
          mixture_stats(s.dp.phi.row(d).transpose(), per, cache.kuu,
                        s.components.noise_prec);
      terms[du] = free_energy_batch(detail::observed_column(y, d), mixed.stats,
                                    mixed.kuu, mixed.beta, jitter,
                                    Vector::Ones(1), with_gradient);
    });
    for (Index d = 0; d < dims; ++d) {
      const auto du = static_cast<std::size_t>(d);
      const auto &ft = terms[du];
      r.gp.f_per_dim[d] = ft.values[0];
      if (!with_gradient)
        continue;
      const Index dd = y.column_complete(d) ? -1 : d;
      for (Index k = 0; k < t; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const auto &rk = restricted[du][ku];
        d_phi(d, k) = ft.d_psi0 * rk.psi0 +
                      ft.d_psi1.cwiseProduct(rk.psi1).sum() +
                      ft.d_psi2.cwiseProduct(rk.psi2).sum() +
                      ft.d_kuu.cwiseProduct(cache.kuu[ku]).sum() +
                      ft.d_beta * s.components.noise_prec[k];
        if (s.dp.phi(d, k) != 0.0)
          acc[ku].add(ft, s.dp.phi(d, k), y, dd);
      }
    }
  }

  double sum_f = 0.0;
  for (Index d = 0; d < dims; ++d)
    sum_f += r.gp.f_per_dim[d];
  r.gp.kl_x = kl_latent(s.latent);
  r.gp.total = sum_f - r.gp.kl_x;
  r.dp = detail::dp_part(s);
  r.hyperprior = hyperprior_log_density(s.components);
  r.total = r.gp.total + r.dp.total + r.hyperprior;
  if (!std::isfinite(r.total))
    throw NumericError("elbo: objective is not finite");
  if (!with_gradient)
    return ev;

  std::vector<StateGradient> parts(static_cast<std::size_t>(t));
  parallel_for(static_cast<std::size_t>(t), [&](std::size_t ku) {
    parts[ku] = detail::zero_gradient(s);
    detail::backprop_component(s, cache, static_cast<Index>(ku), acc[ku],
                               parts[ku]);
  });
  StateGradient g = detail::zero_gradient(s);
  for (const auto &part : parts)
    detail::add_into(g, part);

  // -KL[q(X) || p(X)]
  g.mu -= s.latent.mu;
  g.sigma.array() -= 0.5 * (1.0 - s.latent.sigma.array().inverse());

  if (s.mode != ModelMode::kBgpLvm) {
    g.dp = dp_lower_bound_gradient(s.dp, s.config.s1, s.config.s2,
                                   s.mode == ModelMode::kDpGpLvm);
    g.dp.phi += d_phi;
  } else {
    g.dp.phi = d_phi;
  }
  ev.gradient = std::move(g);
  return ev;
}

inline ElboReport elbo(const ModelState &s, const DataMatrix &y) {
  return evaluate(s, y, false).report;
}

/// sum_d F_d - KL[q(X) || p(X)] under the state's bound form.
inline GPBoundBreakdown gp_lower_bound(const ModelState &s,
                                       const DataMatrix &y) {
  return evaluate(s, y, false).report.gp;
}

/// Chain rule from constrained gradient to the unconstrained vector layout,
/// including the hyperprior (whose unconstrained gradient is -1 - u).
inline Vector to_unconstrained_gradient(const ModelState &s,
                                        const StateGradient &g) {
  const auto p = ParameterLayout::of(s);
  Vector out(p.size);
  detail::write_row_major(out, p.mu, g.mu);
  detail::write_row_major(out, p.log_sigma,
                          g.sigma.cwiseProduct(s.latent.sigma));
  detail::write_row_major(out, p.xu, g.xu);

  auto hyper = [](double theta) { return -1.0 - std::log(theta); };
  Vector dsv(p.t), dnp(p.t);
  Matrix dard(p.t, p.q);
  for (Index k = 0; k < p.t; ++k) {
    const double sv = s.components.signal_var[k];
    const double np = s.components.noise_prec[k];
    dsv[k] = g.signal_var[k] * sv + hyper(sv);
    dnp[k] = g.noise_prec[k] * np + hyper(np);
    for (Index q = 0; q < p.q; ++q) {
      const double a = s.components.ard(k, q);
      dard(k, q) = g.ard(k, q) * a + hyper(a);
    }
  }
  out.segment(p.log_signal_var, p.t) = dsv;
  detail::write_row_major(out, p.log_ard, dard);
  out.segment(p.log_noise_prec, p.t) = dnp;

  if (p.has_dp) {
    out.segment(p.log_a, p.t - 1) = g.dp.a.cwiseProduct(s.dp.a);
    out.segment(p.log_b, p.t - 1) = g.dp.b.cwiseProduct(s.dp.b);
    out[p.log_w1] = g.dp.w1 * s.dp.w1;
    out[p.log_w2] = g.dp.w2 * s.dp.w2;
  }
  if (p.has_phi) {
    Matrix dl(p.d, p.t);
    for (Index d = 0; d < p.d; ++d) {
      const double mean = s.dp.phi.row(d).dot(g.dp.phi.row(d));
      for (Index k = 0; k < p.t; ++k)
        dl(d, k) = s.dp.phi(d, k) * (g.dp.phi(d, k) - mean);
    }
    detail::write_row_major(out, p.phi_logits, dl);
  }

  auto check = [&](Index at, Index len, const char *name) {
    if (len > 0 && !out.segment(at, len).allFinite())
      throw NumericError(std::string("elbo_gradient: non-finite entry in ") +
                         name);
  };
  check(p.mu, p.n * p.q, "mu");
  check(p.log_sigma, p.n * p.q, "sigma");
  check(p.xu, p.m * p.q, "xu");
  check(p.log_signal_var, p.t, "signal_var");
  check(p.log_ard, p.t * p.q, "ard");
  check(p.log_noise_prec, p.t, "noise_prec");
  if (p.has_dp) {
    check(p.log_a, 2 * (p.t - 1) + 2, "stick/alpha parameters");
  }
  if (p.has_phi)
    check(p.phi_logits, p.d * p.t, "phi");
  return out;
}

/// Gradient of the ELBO in the unconstrained parameterization.
inline Vector elbo_gradient(const ModelState &s, const DataMatrix &y) {
  const auto ev = evaluate(s, y, true);
  return to_unconstrained_gradient(s, *ev.gradient);
}

} // namespace dpgplvm

#endif // DPGPLVM_OBJECTIVE_HPP_
