#ifndef DPGPLVM_INFERENCE_HPP_
#define DPGPLVM_INFERENCE_HPP_

#include "dpgplvm/objective.hpp"
#include "dpgplvm/optimizer.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace dpgplvm {

struct Predictive {
  Matrix mean;
  Matrix var;
};

struct QU {
  Vector mean;
  Matrix cov;
};

namespace detail {

/// Statistics, inducing covariance and precision that a prediction for
/// dimension d is conditioned on.
struct Conditioning {
  PsiStats stats;
  Matrix kuu;
  double beta = 0.0;
  Vector y; // observed entries of column d
};

inline Conditioning component_conditioning(const ModelState &s,
                                           const ComponentCache &cache,
                                           const DataMatrix &y, Index d,
                                           Index k) {
  return {cache.restricted(y, d, k, s), cache.kuu[static_cast<std::size_t>(k)],
          s.components.noise_prec[k], observed_column(y, d)};
}

inline Conditioning mixed_conditioning(const ModelState &s,
                                       const ComponentCache &cache,
                                       const DataMatrix &y, Index d) {
  auto mixed = dimension_stats(cache, s, y, d);
  return {std::move(mixed.stats), std::move(mixed.kuu), mixed.beta,
          observed_column(y, d)};
}

inline QU qu_from(const Conditioning &c, double jitter) {
  const auto f = factorize(c.y, c.stats, c.kuu, c.beta, jitter);
  // Sigma = K + beta Psi2 = Lu A Lu^T, so K Sigma^-1 K = Lu A^-1 Lu^T.
  const Matrix la_inv_lut = solve_lower(f.la, f.lu.transpose());
  QU out;
  out.cov = la_inv_lut.transpose() * la_inv_lut;
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  // beta K Sigma^-1 Psi1^T y = beta Lu A^-1 Lu^-1 Psi1^T y
  out.mean = c.beta * (la_inv_lut.transpose() * f.cy.col(0));
  return out;
}

/// Point predictions at the rows of `kxu` (P x M cross-covariance to Xu).
inline void predict_from(const Conditioning &c, const Matrix &kxu,
                         double kxx_diag, double jitter, Vector &mean,
                         Vector &var) {
  const auto f = factorize(c.y, c.stats, c.kuu, c.beta, jitter);
  const Matrix a = solve_lower(f.lu, kxu.transpose());
  const Matrix b = solve_lower(f.la, a);
  mean = c.beta * (b.transpose() * f.cy.col(0));
  var = (kxx_diag - a.colwise().squaredNorm().array() +
         b.colwise().squaredNorm().array() + 1.0 / c.beta)
            .matrix()
            .transpose();
}

inline void check_dimension(const ModelState &s, Index d) {
  if (d < 0 || d >= s.dp.phi.rows())
    throw InputError("dimension index " + std::to_string(d) + " out of range");
}

} // namespace detail

/// Optimal Gaussian q(U) for dimension d under the phi-mixed statistics.
inline QU optimal_qu(const ModelState &s, const DataMatrix &y, Index d) {
  detail::check_consistent(s, y);
  detail::check_dimension(s, d);
  const auto cache = ComponentCache::build(s, !y.complete());
  return detail::qu_from(detail::mixed_conditioning(s, cache, y, d),
                         s.config.jitter);
}

/// Optimal q(U) for dimension d if it were generated by component k alone.
inline QU optimal_qu_component(const ModelState &s, const DataMatrix &y,
                               Index d, Index k) {
  detail::check_consistent(s, y);
  detail::check_dimension(s, d);
  detail::require(k >= 0 && k < s.t(), "component index out of range");
  const auto cache = ComponentCache::build(s, !y.complete());
  return detail::qu_from(detail::component_conditioning(s, cache, y, d, k),
                         s.config.jitter);
}

/// Predictive moments at latent points `xstar` for the listed dimensions
/// (0-based; all dimensions when empty). Column c of the result belongs to
/// dims[c].
///
/// With the plug-in bound every dimension uses phi-mixed kernels. With the
/// expected bound each component predicts separately and the results are
/// combined as a phi-weighted mixture (first two moments).
inline Predictive predict(const ModelState &s, const DataMatrix &y,
                          const Matrix &xstar, std::vector<Index> dims = {}) {
  detail::check_consistent(s, y);
  detail::require_shape(xstar.cols() == s.latent.q(),
                        "predict: query width differs from Q");
  detail::require_finite(xstar, "predict query");
  if (dims.empty())
    for (Index d = 0; d < y.cols(); ++d)
      dims.push_back(d);
  for (Index d : dims)
    detail::check_dimension(s, d);

  const auto cache = ComponentCache::build(s, !y.complete());
  const Index t = s.t();
  const Index p = xstar.rows();
  std::vector<Matrix> kxu(static_cast<std::size_t>(t));
  for (Index k = 0; k < t; ++k)
    kxu[static_cast<std::size_t>(k)] =
        ard_se(xstar, s.latent.xu, s.components.signal_var[k],
               s.components.ard.row(k).transpose());

  Predictive out;
  out.mean.resize(p, static_cast<Index>(dims.size()));
  out.var.resize(p, static_cast<Index>(dims.size()));
  parallel_for(dims.size(), [&](std::size_t c) {
    const Index d = dims[c];
    const auto col = static_cast<Index>(c);
    Vector mean, var;
    if (s.config.bound == BoundForm::kPlugin) {
      Matrix mixed_kxu = Matrix::Zero(p, s.latent.m());
      double kxx = 0.0;
      for (Index k = 0; k < t; ++k) {
        mixed_kxu += s.dp.phi(d, k) * kxu[static_cast<std::size_t>(k)];
        kxx += s.dp.phi(d, k) * s.components.signal_var[k];
      }
      detail::predict_from(detail::mixed_conditioning(s, cache, y, d),
                           mixed_kxu, kxx, s.config.jitter, mean, var);
    } else {
      mean = Vector::Zero(p);
      Vector second = Vector::Zero(p);
      for (Index k = 0; k < t; ++k) {
        const double w = s.dp.phi(d, k);
        if (w == 0.0)
          continue;
        Vector mk, vk;
        detail::predict_from(
            detail::component_conditioning(s, cache, y, d, k),
            kxu[static_cast<std::size_t>(k)], s.components.signal_var[k],
            s.config.jitter, mk, vk);
        mean += w * mk;
        second += w * (vk.array() + mk.array().square()).matrix();
      }
      var = second - mean.cwiseAbs2();
    }
    out.mean.col(col) = mean;
    out.var.col(col) = var;
  });
  return out;
}

struct ImputedEntry {
  Index row = 0;
  Index col = 0;
  double mean = 0.0;
  double var = 0.0;
};

struct Imputation {
  std::vector<ImputedEntry> entries; // column-major order over masked cells
  std::optional<double> mse;
};

/// Predicts every unobserved entry of `y` at its row's latent mean. When
/// `truth` is given, it must observe every entry that `y` masks.
inline Imputation impute(const ModelState &s, const DataMatrix &y,
                         const std::optional<Matrix> &truth = std::nullopt) {
  detail::check_consistent(s, y);
  if (truth) {
    detail::require_shape(truth->rows() == y.rows() && truth->cols() == y.cols(),
                          "impute: truth shape differs from data");
    for (Index d = 0; d < y.cols(); ++d)
      for (Index n = 0; n < y.rows(); ++n)
        if (!y.mask(n, d) && !std::isfinite((*truth)(n, d)))
          throw InputError("impute: truth is missing for masked entry (" +
                           std::to_string(n) + ", " + std::to_string(d) + ")");
  }
  Imputation out;
  double sq = 0.0;
  for (Index d = 0; d < y.cols(); ++d) {
    std::vector<Index> rows;
    for (Index n = 0; n < y.rows(); ++n)
      if (!y.mask(n, d))
        rows.push_back(n);
    if (rows.empty())
      continue;
    Matrix xs(static_cast<Index>(rows.size()), s.latent.q());
    for (std::size_t r = 0; r < rows.size(); ++r)
      xs.row(static_cast<Index>(r)) = s.latent.mu.row(rows[r]);
    const auto pred = predict(s, y, xs, {d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto ri = static_cast<Index>(r);
      out.entries.push_back({rows[r], d, pred.mean(ri, 0), pred.var(ri, 0)});
      if (truth) {
        const double e = pred.mean(ri, 0) - (*truth)(rows[r], d);
        sq += e * e;
      }
    }
  }
  if (truth && !out.entries.empty())
    out.mse = sq / static_cast<double>(out.entries.size());
  return out;
}

class LatentInferenceError : public NumericError {
public:
  LatentInferenceError(const std::string &what, std::vector<double> history)
      : NumericError(what), elbo_history(std::move(history)) {}
  std::vector<double> elbo_history;
};

struct LatentInference {
  /// mu and sigma over the P new rows; xu is the trained inducing set.
  VariationalLatent latent;
  /// Joint ELBO minus training ELBO.
  double bound_ratio = 0.0;
  std::vector<double> elbo_history;
};

/// Fits q(X*) for new observations `ystar` (P x D, may be masked) against
/// the joint bound, holding every trained parameter fixed.
inline LatentInference infer_latent_new(const ModelState &trained,
                                        const DataMatrix &y,
                                        const DataMatrix &ystar) {
  detail::check_consistent(trained, y);
  detail::require_shape(ystar.cols() == y.cols(),
                        "infer_latent_new: new data has the wrong column count");
  const Index n = y.rows(), p = ystar.rows(), q = trained.latent.q();
  LatentInference out;
  out.latent.xu = trained.latent.xu;
  out.latent.mu.resize(p, q);
  out.latent.sigma.resize(p, q);
  if (p == 0)
    return out;
  for (Index r = 0; r < p; ++r)
    for (Index d = 0; d < ystar.cols(); ++d)
      if (ystar.mask(r, d) && !std::isfinite(ystar.values(r, d)))
        throw NumericError("infer_latent_new: non-finite observed entry");

  // Initialize each new row at its nearest training row over shared entries.
  for (Index r = 0; r < p; ++r) {
    Index best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      double dist = 0.0;
      for (Index d = 0; d < y.cols(); ++d)
        if (ystar.mask(r, d) && y.mask(i, d)) {
          const double e = ystar.values(r, d) - y.values(i, d);
          dist += e * e;
        }
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    out.latent.mu.row(r) = trained.latent.mu.row(best);
    out.latent.sigma.row(r) = trained.latent.sigma.row(best);
  }

  auto joint_of = [&](const Matrix &mu_new, const Matrix &sigma_new) {
    ModelState joint = trained;
    joint.config.n = static_cast<std::size_t>(n + p);
    joint.latent.mu.resize(n + p, q);
    joint.latent.mu << trained.latent.mu, mu_new;
    joint.latent.sigma.resize(n + p, q);
    joint.latent.sigma << trained.latent.sigma, sigma_new;
    return joint;
  };
  DataMatrix yj(Matrix(n + p, y.cols()), BoolMatrix(n + p, y.cols()));
  yj.values << y.zero_filled(), ystar.zero_filled();
  yj.mask << y.mask, ystar.mask;

  const ModelState start = joint_of(out.latent.mu, out.latent.sigma);
  const auto layout = ParameterLayout::of(start);
  std::vector<char> frozen(static_cast<std::size_t>(layout.size), 1);
  for (Index i = n; i < n + p; ++i)
    for (Index c = 0; c < q; ++c) {
      frozen[static_cast<std::size_t>(layout.mu + i * q + c)] = 0;
      frozen[static_cast<std::size_t>(layout.log_sigma + i * q + c)] = 0;
    }
  const auto trace = optimize(start, yj, {}, frozen);
  for (const auto &r : trace.elbo_history)
    out.elbo_history.push_back(r.total);
  if (trace.error)
    throw LatentInferenceError("infer_latent_new: " + *trace.error,
                               out.elbo_history);

  out.latent.mu = trace.final_state.latent.mu.bottomRows(p);
  out.latent.sigma = trace.final_state.latent.sigma.bottomRows(p);
  const double joint =
      elbo(joint_of(out.latent.mu, out.latent.sigma), yj).total;
  out.bound_ratio = joint - elbo(trained, y).total;
  return out;
}

} // namespace dpgplvm

#endif // DPGPLVM_INFERENCE_HPP_
