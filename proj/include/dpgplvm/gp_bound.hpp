#ifndef DPGPLVM_GP_BOUND_HPP_
#define DPGPLVM_GP_BOUND_HPP_

#include "dpgplvm/kernels.hpp"
#include "dpgplvm/model.hpp"

#include <vector>

namespace dpgplvm {

struct GPBoundBreakdown {
  Vector f_per_dim;
  double kl_x = 0.0;
  double total = 0.0;
};

/// Free energies of several columns that share one set of statistics, and the
/// weighted gradient sum_c w_c dF_c / d(psi0, Psi1, Psi2, Kuu, beta). Kuu
/// excludes jitter; gradients treat every matrix entry as independent.
struct FreeEnergyBatch {
  Vector values;
  double d_psi0 = 0.0;
  Matrix d_psi1; // N_obs x M
  Matrix d_psi2; // M x M
  Matrix d_kuu;  // M x M
  double d_beta = 0.0;
};

namespace detail {

struct FreeEnergyFactors {
  Matrix lu;       // chol(Kuu + jitter I)
  Matrix b;        // Lu^-1 Psi2 Lu^-T
  Matrix la;       // chol(beta B + I)
  Matrix lu_inv_c; // Lu^-1 Psi1^T Y
  Matrix cy;       // La^-1 Lu^-1 Psi1^T Y
};

inline FreeEnergyFactors factorize(const Matrix &y, const PsiStats &stats,
                                   const Matrix &kuu, double beta,
                                   double jitter) {
  FreeEnergyFactors f;
  Matrix k = kuu;
  k.diagonal().array() += jitter;
  f.lu = cholesky_lower(k, "Kuu");
  const Matrix half = solve_lower(f.lu, stats.psi2);
  f.b = solve_lower(f.lu, half.transpose());
  f.b = 0.5 * (f.b + f.b.transpose());
  Matrix a = beta * f.b;
  a.diagonal().array() += 1.0;
  f.la = cholesky_lower(a, "I + beta Lu^-1 Psi2 Lu^-T");
  f.lu_inv_c = solve_lower(f.lu, stats.psi1.transpose() * y);
  f.cy = solve_lower(f.la, f.lu_inv_c);
  return f;
}

inline void check_free_energy_args(const Matrix &y, const PsiStats &stats,
                                   const Matrix &kuu, double beta,
                                   double jitter) {
  require_shape(stats.psi1.rows() == y.rows(),
                "free_energy_dim: psi1 rows differ from observed count");
  require_shape(stats.psi1.cols() == kuu.rows() && kuu.rows() == kuu.cols() &&
                    stats.psi2.rows() == kuu.rows() &&
                    stats.psi2.cols() == kuu.rows(),
                "free_energy_dim: inducing dimensions disagree");
  require(y.rows() >= 1, "free_energy_dim: need at least one observed entry");
  require(beta > 0 && std::isfinite(beta), "free_energy_dim: beta must be positive");
  require(jitter >= 0, "free_energy_dim: jitter must be nonnegative");
  require_finite(y, "y_d");
}

inline double free_energy_from(const FreeEnergyFactors &f,
                               const PsiStats &stats, double beta, double nd,
                               double yty, double cy_norm2) {
  return -0.5 * nd * kLog2Pi + 0.5 * nd * std::log(beta) -
         f.la.diagonal().array().log().sum() - 0.5 * beta * stats.psi0 +
         0.5 * beta * f.b.trace() - 0.5 * beta * yty +
         0.5 * beta * beta * cy_norm2;
}

} // namespace detail

/// Collapsed free energy F_d, evaluated through two Cholesky factors and
/// triangular solves only. `y` holds the observed entries of the column and
/// `stats` must be restricted to those rows.
inline double free_energy_dim(const Vector &y, const PsiStats &stats,
                              const Matrix &kuu, double beta, double jitter) {
  detail::check_free_energy_args(y, stats, kuu, beta, jitter);
  const auto f = detail::factorize(y, stats, kuu, beta, jitter);
  return detail::free_energy_from(f, stats, beta, static_cast<double>(y.size()),
                                  y.squaredNorm(), f.cy.squaredNorm());
}

/// Free energies of the columns of `y` (all observed on the same rows) and,
/// when `with_gradient`, the `weights`-weighted gradient.
inline FreeEnergyBatch free_energy_batch(const Matrix &y, const PsiStats &stats,
                                         const Matrix &kuu, double beta,
                                         double jitter, const Vector &weights,
                                         bool with_gradient = true) {
  using namespace detail;
  check_free_energy_args(y, stats, kuu, beta, jitter);
  require_shape(weights.size() == y.cols(),
                "free_energy_batch: one weight per column required");
  const auto f = factorize(y, stats, kuu, beta, jitter);
  const Index m = kuu.rows();
  const double nd = static_cast<double>(y.rows());
  const Vector yty = y.colwise().squaredNorm().transpose();
  const Vector cyn = f.cy.colwise().squaredNorm().transpose();

  FreeEnergyBatch out;
  out.values.resize(y.cols());
  for (Index c = 0; c < y.cols(); ++c)
    out.values[c] = free_energy_from(f, stats, beta, nd, yty[c], cyn[c]);
  if (!with_gradient)
    return out;

  const double wsum = weights.sum();
  const Matrix eye = Matrix::Identity(m, m);
  const Matrix a_inv = chol_solve(f.la, eye);
  // W = A^-1 Lu^-1 C, V = Lu^-T W = (beta Psi2 + K)^-1 Psi1^T Y
  const Matrix w = a_inv * f.lu_inv_c;
  const Matrix v = solve_upper_t(f.lu, w);
  // E = Lu^-T (I - A^-1) Lu^-1 = K^-1 - (beta Psi2 + K)^-1
  const Matrix left = solve_upper_t(f.lu, eye - a_inv);
  Matrix e = solve_upper_t(f.lu, left.transpose()).transpose();
  e = 0.5 * (e + e.transpose());
  // beta K^-1 Psi2 K^-1 = Lu^-T (beta B) Lu^-1
  const Matrix left_b = solve_upper_t(f.lu, beta * f.b);
  Matrix kpk = solve_upper_t(f.lu, left_b.transpose()).transpose();
  kpk = 0.5 * (kpk + kpk.transpose());
  const Matrix vwv = v * weights.asDiagonal() * v.transpose();

  const double beta2 = beta * beta;
  out.d_psi0 = -0.5 * beta * wsum;
  out.d_psi1 = beta2 * y * weights.asDiagonal() * v.transpose();
  out.d_psi2 = 0.5 * beta * wsum * e - 0.5 * beta2 * beta * vwv;
  out.d_kuu = 0.5 * wsum * (e - kpk) - 0.5 * beta2 * vwv;
  const double tr_b = f.b.trace();
  const double tr_ainv_b = a_inv.cwiseProduct(f.b).sum();
  const double shared = 0.5 * nd / beta - 0.5 * stats.psi0 +
                        0.5 * (tr_b - tr_ainv_b);
  const Matrix bw = f.b * w;
  for (Index c = 0; c < y.cols(); ++c) {
    if (weights[c] == 0.0)
      continue;
    const double c_v = f.lu_inv_c.col(c).dot(w.col(c));
    const double v_p_v = w.col(c).dot(bw.col(c));
    out.d_beta += weights[c] * (shared - 0.5 * yty[c] + beta * c_v -
                                0.5 * beta2 * v_p_v);
  }
  return out;
}

/// KL[q(X) || N(0, I)] for a diagonal Gaussian q(X).
inline double kl_latent(const VariationalLatent &l) {
  detail::require_shape(l.sigma.rows() == l.mu.rows() &&
                            l.sigma.cols() == l.mu.cols(),
                        "kl_latent: sigma shape differs from mu");
  if ((l.sigma.array() <= 0).any())
    throw InputError("kl_latent: variances must be positive");
  double kl = 0.0;
  for (Index i = 0; i < l.mu.rows(); ++i)
    for (Index q = 0; q < l.mu.cols(); ++q) {
      const double s = l.sigma(i, q);
      kl += l.mu(i, q) * l.mu(i, q) + s - std::log(s) - 1.0;
    }
  return 0.5 * kl;
}

/// Per-component statistics shared by every dimension, plus the per-sample
/// Psi2 terms needed when some columns have unobserved rows.
struct ComponentCache {
  std::vector<PsiStats> full; // over all N rows
  std::vector<Matrix> kuu;
  /// psi2_samples[t][i]; filled only when the data has missing entries.
  std::vector<std::vector<Matrix>> psi2_samples;

  static ComponentCache build(const ModelState &s, bool need_samples) {
    const Index t = s.t();
    ComponentCache c;
    c.full.resize(static_cast<std::size_t>(t));
    c.kuu.resize(static_cast<std::size_t>(t));
    if (need_samples)
      c.psi2_samples.resize(static_cast<std::size_t>(t));
    for (Index k = 0; k < t; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const double s2 = s.components.signal_var[k];
      const Vector gamma = s.components.ard.row(k).transpose();
      auto &ps = c.full[ku];
      ps.psi0 = psi0(s2, s.latent.n());
      ps.psi1 = psi1(s.latent, s2, gamma);
      c.kuu[ku] = ard_se(s.latent.xu, s.latent.xu, s2, gamma);
      if (need_samples) {
        auto &samples = c.psi2_samples[ku];
        samples.reserve(static_cast<std::size_t>(s.latent.n()));
        const auto geo = detail::psi2_geometry(s.latent.xu, s2, gamma);
        Eigen::ArrayXXd sample;
        ps.psi2 = Matrix::Zero(s.latent.m(), s.latent.m());
        for (Index i = 0; i < s.latent.n(); ++i) {
          detail::psi2_sample_into(s.latent, i, gamma, geo, sample);
          samples.push_back(sample.matrix());
          ps.psi2 += samples.back();
        }
        ps.psi2 = 0.5 * (ps.psi2 + ps.psi2.transpose());
      } else {
        ps.psi2 = psi2(s.latent, s2, gamma);
      }
    }
    return c;
  }

  /// Component k's statistics restricted to the observed rows of column d.
  PsiStats restricted(const DataMatrix &y, Index d, Index k,
                      const ModelState &s) const {
    const auto ku = static_cast<std::size_t>(k);
    if (y.column_complete(d))
      return full[ku];
    const Index nd = y.observed_in_column(d);
    PsiStats ps;
    ps.psi0 = psi0(s.components.signal_var[k], nd);
    ps.psi1.resize(nd, full[ku].psi1.cols());
    ps.psi2 = Matrix::Zero(full[ku].psi2.rows(), full[ku].psi2.cols());
    Index r = 0;
    for (Index i = 0; i < y.rows(); ++i)
      if (y.mask(i, d)) {
        ps.psi1.row(r++) = full[ku].psi1.row(i);
        ps.psi2 += psi2_samples[ku][static_cast<std::size_t>(i)];
      }
    ps.psi2 = 0.5 * (ps.psi2 + ps.psi2.transpose());
    return ps;
  }
};

namespace detail {

inline Vector observed_column(const DataMatrix &y, Index d) {
  Vector out(y.observed_in_column(d));
  Index r = 0;
  for (Index i = 0; i < y.rows(); ++i)
    if (y.mask(i, d))
      out[r++] = y.values(i, d);
  return out;
}

inline void check_consistent(const ModelState &s, const DataMatrix &y) {
  validate(s);
  require_shape(y.rows() == s.latent.n() && y.cols() == s.dp.phi.rows(),
                "data shape does not match the model state");
  for (Index d = 0; d < y.cols(); ++d)
    if (y.observed_in_column(d) < 1)
      throw InputError("column " + std::to_string(d) +
                       " has no observed entries");
}

} // namespace detail

} // namespace dpgplvm

#endif // DPGPLVM_GP_BOUND_HPP_
