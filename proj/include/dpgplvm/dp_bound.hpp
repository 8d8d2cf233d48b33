#ifndef DPGPLVM_DP_BOUND_HPP_
#define DPGPLVM_DP_BOUND_HPP_

#include "dpgplvm/model.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>

namespace dpgplvm {

namespace special {

inline double digamma(double x) { return boost::math::digamma(x); }
inline double trigamma(double x) { return boost::math::trigamma(x); }
inline double lgamma(double x) { return std::lgamma(x); }
inline double lbeta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

} // namespace special

struct DPBoundBreakdown {
  double e_log_pz = 0.0;
  double e_log_pv = 0.0;
  double e_log_palpha = 0.0;
  double h_qv = 0.0;
  double h_qz = 0.0;
  double h_qalpha = 0.0;
  double total = 0.0;
};

/// Stick-breaking weights pi_t = v_t prod_{i<t}(1 - v_i); the last component
/// takes the remaining stick.
inline Vector mixing_proportions(const Vector &v) {
  if ((v.array() <= 0.0).any() || (v.array() >= 1.0).any())
    throw InputError("mixing_proportions: stick fractions must lie in (0,1)");
  const Index t = v.size() + 1;
  Vector pi(t);
  double remaining = 1.0;
  for (Index k = 0; k + 1 < t; ++k) {
    pi[k] = v[k] * remaining;
    remaining *= 1.0 - v[k];
  }
  pi[t - 1] = remaining;
  return pi;
}

struct DPExpectations {
  double e_log_pz = 0.0;
  double e_log_pv = 0.0;
  double e_log_palpha = 0.0;
};

namespace detail {

inline void check_dp(const DPState &dp, double s1, double s2) {
  const Index t = dp.phi.cols();
  require_shape(dp.a.size() == std::max<Index>(t - 1, 0) &&
                    dp.b.size() == dp.a.size(),
                "dp: stick parameters must have length T-1");
  require((dp.a.array() > 0).all() && (dp.b.array() > 0).all(),
          "dp: Beta parameters must be positive");
  require(dp.w1 > 0 && dp.w2 > 0, "dp: Gamma parameters must be positive");
  require(s1 > 0 && s2 > 0, "dp: prior parameters must be positive");
}

} // namespace detail

/// E_q[log p(Z|V)] (summed over dimensions), E_q[log p(V|alpha)] and
/// E_q[log p(alpha)] with alpha ~ Gamma(s1, s2) (shape/rate).
inline DPExpectations dp_expected_log_priors(const DPState &dp, double s1,
                                             double s2) {
  detail::check_dp(dp, s1, s2);
  using special::digamma;
  const Index t = dp.phi.cols();
  const Index sticks = t - 1;
  DPExpectations out;

  Vector e_log_v(sticks), e_log_1mv(sticks);
  for (Index k = 0; k < sticks; ++k) {
    const double dab = digamma(dp.a[k] + dp.b[k]);
    e_log_v[k] = digamma(dp.a[k]) - dab;
    e_log_1mv[k] = digamma(dp.b[k]) - dab;
  }
  for (Index d = 0; d < dp.phi.rows(); ++d) {
    // tail = sum_{t' > k} phi_{d,t'}
    double tail = dp.phi.row(d).sum();
    for (Index k = 0; k < sticks; ++k) {
      tail -= dp.phi(d, k);
      out.e_log_pz += dp.phi(d, k) * e_log_v[k] + tail * e_log_1mv[k];
    }
  }

  const double e_alpha = dp.w1 / dp.w2;
  const double e_log_alpha = digamma(dp.w1) - std::log(dp.w2);
  out.e_log_pv = static_cast<double>(sticks) * e_log_alpha;
  for (Index k = 0; k < sticks; ++k)
    out.e_log_pv += (e_alpha - 1.0) * e_log_1mv[k];

  out.e_log_palpha = -special::lgamma(s1) + s1 * std::log(s2) - s2 * e_alpha +
                     (s1 - 1.0) * e_log_alpha;
  return out;
}

struct DPEntropies {
  double h_qv = 0.0;
  double h_qz = 0.0;
  double h_qalpha = 0.0;
};

/// Entropies of q(V) (T-1 Beta factors), q(Z) and q(alpha).
inline DPEntropies dp_entropies(const DPState &dp) {
  detail::check_dp(dp, 1.0, 1.0);
  using special::digamma;
  DPEntropies out;
  for (Index k = 0; k < dp.a.size(); ++k) {
    const double a = dp.a[k];
    const double b = dp.b[k];
    out.h_qv += special::lbeta(a, b) - (a - 1.0) * digamma(a) -
                (b - 1.0) * digamma(b) + (a + b - 2.0) * digamma(a + b);
  }
  for (Index d = 0; d < dp.phi.rows(); ++d)
    for (Index k = 0; k < dp.phi.cols(); ++k) {
      const double p = dp.phi(d, k);
      if (p > 0.0)
        out.h_qz -= p * std::log(p);
    }
  out.h_qalpha = dp.w1 - std::log(dp.w2) + special::lgamma(dp.w1) +
                 (1.0 - dp.w1) * digamma(dp.w1);
  return out;
}

inline DPBoundBreakdown dp_lower_bound(const DPState &dp, double s1,
                                       double s2) {
  const auto e = dp_expected_log_priors(dp, s1, s2);
  const auto h = dp_entropies(dp);
  DPBoundBreakdown out;
  out.e_log_pz = e.e_log_pz;
  out.e_log_pv = e.e_log_pv;
  out.e_log_palpha = e.e_log_palpha;
  out.h_qv = h.h_qv;
  out.h_qz = h.h_qz;
  out.h_qalpha = h.h_qalpha;
  out.total = out.e_log_pz + out.e_log_pv + out.e_log_palpha + out.h_qv +
              out.h_qz + out.h_qalpha;
  return out;
}

/// Gradient of dp_lower_bound with respect to the constrained DP parameters.
struct DPGradient {
  Vector a, b;
  Matrix phi;
  double w1 = 0.0;
  double w2 = 0.0;
};

/// When `include_hz` is false the q(Z) entropy is held out (fixed Z).
inline DPGradient dp_lower_bound_gradient(const DPState &dp, double s1,
                                          double s2, bool include_hz = true) {
  detail::check_dp(dp, s1, s2);
  using special::digamma;
  using special::trigamma;
  const Index t = dp.phi.cols();
  const Index sticks = t - 1;
  DPGradient g;
  g.a = Vector::Zero(sticks);
  g.b = Vector::Zero(sticks);
  g.phi = Matrix::Zero(dp.phi.rows(), t);

  const Vector mass = dp.phi.colwise().sum().transpose();
  const double e_alpha = dp.w1 / dp.w2;
  double sum_e_log_1mv = 0.0;
  Vector e_log_v(sticks), e_log_1mv(sticks);
  double tail = mass.sum();
  for (Index k = 0; k < sticks; ++k) {
    const double a = dp.a[k], b = dp.b[k];
    const double dab = digamma(a + b);
    const double tab = trigamma(a + b);
    const double ta = trigamma(a), tb = trigamma(b);
    e_log_v[k] = digamma(a) - dab;
    e_log_1mv[k] = digamma(b) - dab;
    sum_e_log_1mv += e_log_1mv[k];
    tail -= mass[k];
    // E[log p(Z|V)]
    g.a[k] += mass[k] * (ta - tab) - tail * tab;
    g.b[k] += -mass[k] * tab + tail * (tb - tab);
    // E[log p(V|alpha)]
    g.a[k] += (e_alpha - 1.0) * (-tab);
    g.b[k] += (e_alpha - 1.0) * (tb - tab);
    // H[q(V)]
    g.a[k] += -(a - 1.0) * ta + (a + b - 2.0) * tab;
    g.b[k] += -(b - 1.0) * tb + (a + b - 2.0) * tab;
  }

  // d E[log p(z_d|V)] / d phi_{d,k} = E[log v_k] (k<T) + sum_{s<k} E[log(1-v_s)]
  Vector per_component(t);
  double prefix = 0.0;
  for (Index k = 0; k < t; ++k) {
    per_component[k] = (k < sticks ? e_log_v[k] : 0.0) + prefix;
    if (k < sticks)
      prefix += e_log_1mv[k];
  }
  for (Index d = 0; d < dp.phi.rows(); ++d)
    for (Index k = 0; k < t; ++k) {
      g.phi(d, k) = per_component[k];
      if (include_hz)
        g.phi(d, k) -= std::log(std::max(dp.phi(d, k), 1e-300)) + 1.0;
    }

  const double w1 = dp.w1, w2 = dp.w2;
  const double tw1 = trigamma(w1);
  const double st = static_cast<double>(sticks);
  g.w1 = st * tw1 + sum_e_log_1mv / w2;                  // E[log p(V|alpha)]
  g.w2 = -st / w2 - w1 / (w2 * w2) * sum_e_log_1mv;
  g.w1 += -s2 / w2 + (s1 - 1.0) * tw1;                   // E[log p(alpha)]
  g.w2 += s2 * w1 / (w2 * w2) - (s1 - 1.0) / w2;
  g.w1 += 1.0 + (1.0 - w1) * tw1;                         // H[q(alpha)]
  g.w2 += -1.0 / w2;
  return g;
}

} // namespace dpgplvm

#endif // DPGPLVM_DP_BOUND_HPP_
