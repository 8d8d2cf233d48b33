#ifndef DPGPLVM_KERNELS_HPP_
#define DPGPLVM_KERNELS_HPP_

#include "dpgplvm/model.hpp"

#include <span>
#include <vector>

namespace dpgplvm {

/// Kernel sufficient statistics for one component, or a phi-weighted mixture.
struct PsiStats {
  double psi0 = 0.0;
  Matrix psi1; // N x M
  Matrix psi2; // M x M
};

namespace detail {

inline void check_kernel_args(Index q_x, double sigma2, const Vector &gamma) {
  require_shape(gamma.size() == q_x, "kernel: gamma length differs from Q");
  if (!std::isfinite(sigma2) || !gamma.allFinite())
    throw NumericError("kernel: non-finite hyperparameter");
  require(sigma2 > 0 && (gamma.array() >= 0).all(),
          "kernel: sigma2 must be positive and gamma nonnegative");
}

inline void check_latent(const VariationalLatent &l) {
  require_shape(l.sigma.rows() == l.mu.rows() && l.sigma.cols() == l.mu.cols(),
                "kernel: sigma shape differs from mu");
  require_shape(l.xu.cols() == l.mu.cols(), "kernel: xu has wrong width");
  require_finite(l.mu, "mu");
  require_finite(l.xu, "xu");
  require_finite(l.sigma, "sigma");
  require((l.sigma.array() >= 0).all(), "kernel: negative latent variance");
}

} // namespace detail

/// ARD squared exponential: sigma2 * exp(-1/2 sum_q gamma_q (x1_q - x2_q)^2).
inline Matrix ard_se(const Matrix &x1, const Matrix &x2, double sigma2,
                     const Vector &gamma) {
  detail::require_shape(x1.cols() == x2.cols(), "ard_se: inputs differ in Q");
  detail::check_kernel_args(x1.cols(), sigma2, gamma);
  detail::require_finite(x1, "ard_se input");
  detail::require_finite(x2, "ard_se input");
  Matrix k(x1.rows(), x2.rows());
  for (Index i = 0; i < x1.rows(); ++i)
    for (Index j = 0; j < x2.rows(); ++j) {
      double r2 = 0.0;
      for (Index q = 0; q < x1.cols(); ++q) {
        const double diff = x1(i, q) - x2(j, q);
        r2 += gamma[q] * diff * diff;
      }
      k(i, j) = sigma2 * std::exp(-0.5 * r2);
    }
  return k;
}

/// E[tr K_ff] under q(X); stationarity makes it N * sigma2.
inline double psi0(double sigma2, Index n) {
  detail::require(sigma2 > 0 && std::isfinite(sigma2), "psi0: sigma2 must be positive");
  detail::require(n >= 1, "psi0: need at least one sample");
  return static_cast<double>(n) * sigma2;
}

/// [Psi1]_{ij} = E_{q(x_i)}[k(x_i, xu_j)], evaluated in log space.
/// Variances of exactly zero are allowed here (point-mass q).
inline Matrix psi1(const VariationalLatent &l, double sigma2,
                   const Vector &gamma) {
  detail::check_latent(l);
  detail::check_kernel_args(l.q(), sigma2, gamma);
  const double log_s2 = std::log(sigma2);
  Matrix out(l.n(), l.m());
  for (Index i = 0; i < l.n(); ++i) {
    double log_norm = 0.0;
    for (Index q = 0; q < l.q(); ++q)
      log_norm += std::log1p(gamma[q] * l.sigma(i, q));
    for (Index j = 0; j < l.m(); ++j) {
      double quad = 0.0;
      for (Index q = 0; q < l.q(); ++q) {
        const double diff = l.mu(i, q) - l.xu(j, q);
        quad += gamma[q] * diff * diff / (gamma[q] * l.sigma(i, q) + 1.0);
      }
      out(i, j) = std::exp(log_s2 - 0.5 * log_norm - 0.5 * quad);
    }
  }
  return out;
}

namespace detail {

/// Inducing-pair quantities shared by every Psi2 sample of one component.
struct Psi2Geometry {
  Eigen::ArrayXXd base;              // 2 log sigma2 - 1/4 sum_q gamma_q gap_q^2
  std::vector<Eigen::ArrayXXd> mid;  // per q: (xu_jq + xu_j'q) / 2
  std::vector<Eigen::ArrayXXd> gap;  // per q: xu_jq - xu_j'q
};

inline Psi2Geometry psi2_geometry(const Matrix &xu, double sigma2,
                                  const Vector &gamma) {
  const Index m = xu.rows();
  Psi2Geometry g;
  g.base = Eigen::ArrayXXd::Constant(m, m, 2.0 * std::log(sigma2));
  for (Index q = 0; q < xu.cols(); ++q) {
    const Eigen::ArrayXd x = xu.col(q).array();
    Eigen::ArrayXXd gap = x.replicate(1, m) - x.transpose().replicate(m, 1);
    g.base -= 0.25 * gamma[q] * gap.square();
    g.mid.push_back(0.5 * (x.replicate(1, m) + x.transpose().replicate(m, 1)));
    g.gap.push_back(std::move(gap));
  }
  return g;
}

inline void psi2_sample_into(const VariationalLatent &l, Index i,
                             const Vector &gamma, const Psi2Geometry &geo,
                             Eigen::ArrayXXd &out) {
  double log_norm = 0.0;
  for (Index q = 0; q < l.q(); ++q)
    log_norm += std::log1p(2.0 * gamma[q] * l.sigma(i, q));
  out = geo.base - 0.5 * log_norm;
  for (Index q = 0; q < l.q(); ++q) {
    const double c = gamma[q] / (2.0 * gamma[q] * l.sigma(i, q) + 1.0);
    out -= c * (l.mu(i, q) - geo.mid[static_cast<std::size_t>(q)]).square();
  }
  out = out.exp();
}

} // namespace detail

/// Contribution of sample i to Psi2: E_{q(x_i)}[k(xu_j, x_i) k(x_i, xu_j')].
inline Matrix psi2_sample(const VariationalLatent &l, Index i, double sigma2,
                          const Vector &gamma) {
  const auto geo = detail::psi2_geometry(l.xu, sigma2, gamma);
  Eigen::ArrayXXd out;
  detail::psi2_sample_into(l, i, gamma, geo, out);
  return out.matrix();
}

/// Psi2 summed over the rows selected by `rows` (all rows when empty), in
/// ascending row order, then symmetrized.
inline Matrix psi2(const VariationalLatent &l, double sigma2,
                   const Vector &gamma, std::span<const char> rows = {}) {
  detail::check_latent(l);
  detail::check_kernel_args(l.q(), sigma2, gamma);
  detail::require_shape(rows.empty() || static_cast<Index>(rows.size()) == l.n(),
                        "psi2: row selector has wrong length");
  const auto geo = detail::psi2_geometry(l.xu, sigma2, gamma);
  Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(l.m(), l.m());
  Eigen::ArrayXXd sample;
  for (Index i = 0; i < l.n(); ++i)
    if (rows.empty() || rows[static_cast<std::size_t>(i)]) {
      detail::psi2_sample_into(l, i, gamma, geo, sample);
      sum += sample;
    }
  const Matrix out = sum.matrix();
  return 0.5 * (out + out.transpose());
}

/// Phi-weighted ("tilde") quantities for one observed dimension.
struct MixedStats {
  PsiStats stats;
  Matrix kuu;
  double beta = 0.0;
};

/// Every output is sum_t phi_d[t] * (component t's quantity).
inline MixedStats mixture_stats(const Vector &phi_d,
                                std::span<const PsiStats> per_component,
                                std::span<const Matrix> kuu,
                                const Vector &beta) {
  const Index t = phi_d.size();
  detail::require_shape(static_cast<Index>(per_component.size()) == t &&
                            static_cast<Index>(kuu.size()) == t &&
                            beta.size() == t,
                        "mixture_stats: component lists must have length T");
  if ((phi_d.array() < -1e-8).any() || (phi_d.array() > 1.0 + 1e-8).any() ||
      std::abs(phi_d.sum() - 1.0) > 1e-8)
    throw InputError("mixture_stats: phi_d is not on the simplex");
  MixedStats out;
  out.stats.psi1 = Matrix::Zero(per_component[0].psi1.rows(),
                                per_component[0].psi1.cols());
  out.stats.psi2 = Matrix::Zero(per_component[0].psi2.rows(),
                                per_component[0].psi2.cols());
  out.kuu = Matrix::Zero(kuu[0].rows(), kuu[0].cols());
  for (Index k = 0; k < t; ++k) {
    const double w = phi_d[k];
    const auto ku = static_cast<std::size_t>(k);
    out.stats.psi0 += w * per_component[ku].psi0;
    out.stats.psi1 += w * per_component[ku].psi1;
    out.stats.psi2 += w * per_component[ku].psi2;
    out.kuu += w * kuu[ku];
    out.beta += w * beta[k];
  }
  return out;
}

} // namespace dpgplvm

#endif // DPGPLVM_KERNELS_HPP_
