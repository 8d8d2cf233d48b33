#ifndef DPGPLVM_MODEL_HPP_
#define DPGPLVM_MODEL_HPP_

#include "dpgplvm/common.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dpgplvm {

struct OptimizerConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::size_t max_iters = 2000;
  /// Relative: training stops once the 25-iteration improvement falls below
  /// elbo_tol * |ELBO|.
  double elbo_tol = 1e-4;
};

enum class ModelMode { kDpGpLvm, kBgpLvm, kMrdFixed };

/// How responsibilities enter the GP term.
/// kExpected: sum_t phi_dt F_d(component t), a lower bound for any phi.
/// kPlugin: one F_d evaluated on phi-weighted kernel statistics.
enum class BoundForm { kExpected, kPlugin };

inline std::string_view to_string(BoundForm f) {
  return f == BoundForm::kExpected ? "expected" : "plugin";
}

inline BoundForm bound_form_from_string(std::string_view s) {
  if (s == "expected")
    return BoundForm::kExpected;
  if (s == "plugin")
    return BoundForm::kPlugin;
  throw InputError("unknown bound form '" + std::string(s) +
                   "' (expected 'expected' or 'plugin')");
}

inline std::string_view to_string(ModelMode mode) {
  switch (mode) {
  case ModelMode::kDpGpLvm:
    return "dpgplvm";
  case ModelMode::kBgpLvm:
    return "bgplvm";
  case ModelMode::kMrdFixed:
    return "mrd";
  }
  return "?";
}

inline ModelMode mode_from_string(std::string_view s) {
  if (s == "dpgplvm")
    return ModelMode::kDpGpLvm;
  if (s == "bgplvm")
    return ModelMode::kBgpLvm;
  if (s == "mrd")
    return ModelMode::kMrdFixed;
  throw InputError("unknown mode '" + std::string(s) +
                   "' (expected dpgplvm, bgplvm or mrd)");
}

struct ModelConfig {
  std::size_t q = 2;
  std::size_t t = 5;
  /// 0 selects min(N, 10 Q).
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t d = 0;
  double s1 = 1.0;
  double s2 = 1.0;
  double jitter = 1e-6;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  BoundForm bound = BoundForm::kExpected;

  std::size_t inducing_count() const {
    return m != 0 ? m : std::min(n, 10 * q);
  }
};

/// Throws InputError on the first violated invariant.
inline void validate(const ModelConfig &c) {
  using detail::require;
  require(c.q >= 1, "config: q must be >= 1");
  require(c.n >= 1 && c.d >= 1, "config: n and d must be >= 1");
  require(c.t >= 1 && c.t <= c.d, "config: t must satisfy 1 <= t <= d");
  const std::size_t m = c.inducing_count();
  require(m >= 1 && m <= c.n, "config: m must satisfy 1 <= m <= n");
  require(c.q < c.d, "config: q must be smaller than d");
  require(c.s1 > 0 && c.s2 > 0, "config: s1 and s2 must be positive");
  require(c.jitter > 0, "config: jitter must be positive");
  // A zero learning rate is accepted: training then returns the start state.
  require(c.optimizer.learning_rate >= 0 && c.optimizer.momentum > 0 &&
              c.optimizer.max_iters > 0 && c.optimizer.elbo_tol > 0,
          "config: optimizer fields must be positive");
}

/// Observation matrix; mask(n, d) is true where Y(n, d) was observed.
struct DataMatrix {
  Matrix values;
  BoolMatrix mask;

  DataMatrix() = default;
  explicit DataMatrix(Matrix v)
      : values(std::move(v)),
        mask(BoolMatrix::Constant(values.rows(), values.cols(), true)) {}
  DataMatrix(Matrix v, BoolMatrix m) : values(std::move(v)), mask(std::move(m)) {
    detail::require_shape(values.rows() == mask.rows() &&
                              values.cols() == mask.cols(),
                          "data: mask shape does not match values");
  }

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  Index observed_in_column(Index d) const { return mask.col(d).count(); }
  bool column_complete(Index d) const { return mask.col(d).all(); }
  bool complete() const { return mask.all(); }
  /// Values with unobserved entries set to zero.
  Matrix zero_filled() const {
    return mask.select(values, Matrix::Zero(rows(), cols()));
  }
};

inline void validate(const DataMatrix &y, std::size_t min_per_column) {
  detail::require_shape(y.values.rows() == y.mask.rows() &&
                            y.values.cols() == y.mask.cols(),
                        "data: mask shape does not match values");
  for (Index d = 0; d < y.cols(); ++d) {
    if (static_cast<std::size_t>(y.observed_in_column(d)) < min_per_column)
      throw InputError("data: column " + std::to_string(d) + " has " +
                       std::to_string(y.observed_in_column(d)) +
                       " observed rows, need at least " +
                       std::to_string(min_per_column));
    for (Index n = 0; n < y.rows(); ++n)
      if (y.mask(n, d) && !std::isfinite(y.values(n, d)))
        throw NumericError("data: non-finite observed entry");
  }
}

/// Factorized Gaussian q(X) plus inducing inputs.
struct VariationalLatent {
  Matrix mu;    // N x Q
  Matrix sigma; // N x Q, diagonal variances
  Matrix xu;    // M x Q

  Index n() const { return mu.rows(); }
  Index q() const { return mu.cols(); }
  Index m() const { return xu.rows(); }
};

struct ComponentParams {
  Vector signal_var; // T
  Matrix ard;        // T x Q
  Vector noise_prec; // T

  Index t() const { return signal_var.size(); }
};

struct DPState {
  Vector a;   // T-1
  Vector b;   // T-1
  Matrix phi; // D x T
  double w1 = 1.0;
  double w2 = 1.0;
};

struct ModelState {
  ModelConfig config;
  VariationalLatent latent;
  ComponentParams components;
  DPState dp;
  ModelMode mode = ModelMode::kDpGpLvm;
  /// Component id per observed dimension; only used in kMrdFixed.
  std::vector<int> assignment;

  Index t() const { return components.t(); }
};

/// One-hot responsibilities for a fixed assignment of dimensions to
/// components.
inline Matrix one_hot_phi(const std::vector<int> &assignment, Index t) {
  Matrix phi = Matrix::Zero(static_cast<Index>(assignment.size()), t);
  for (std::size_t d = 0; d < assignment.size(); ++d) {
    const int k = assignment[d];
    if (k < 0 || k >= t)
      throw InputError("assignment label out of range");
    phi(static_cast<Index>(d), k) = 1.0;
  }
  return phi;
}

/// Maps arbitrary group labels onto dense ids 0..K-1 in order of first
/// appearance.
inline std::vector<int> densify_labels(const std::vector<int> &labels) {
  std::vector<int> seen;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto it = std::find(seen.begin(), seen.end(), l);
    if (it == seen.end()) {
      seen.push_back(l);
      out.push_back(static_cast<int>(seen.size()) - 1);
    } else {
      out.push_back(static_cast<int>(it - seen.begin()));
    }
  }
  return out;
}

inline void validate(const ModelState &s) {
  using detail::require;
  using detail::require_shape;
  const auto &l = s.latent;
  const Index t = s.t();
  require_shape(l.sigma.rows() == l.mu.rows() && l.sigma.cols() == l.mu.cols(),
                "state: sigma shape differs from mu");
  require_shape(l.xu.cols() == l.mu.cols(), "state: xu has wrong width");
  require_shape(s.components.ard.rows() == t &&
                    s.components.ard.cols() == l.mu.cols() &&
                    s.components.noise_prec.size() == t,
                "state: component parameter shapes disagree");
  require_shape(s.dp.phi.cols() == t, "state: phi has wrong width");
  require_shape(s.dp.a.size() == std::max<Index>(t - 1, 0) &&
                    s.dp.b.size() == s.dp.a.size(),
                "state: stick parameters must have length T-1");
  detail::require_finite(l.mu, "mu");
  detail::require_finite(l.xu, "xu");
  require((l.sigma.array() > 0).all() && l.sigma.allFinite(),
          "state: sigma entries must be positive");
  require((s.components.signal_var.array() > 0).all() &&
              (s.components.ard.array() > 0).all() &&
              (s.components.noise_prec.array() > 0).all() &&
              s.components.signal_var.allFinite() &&
              s.components.ard.allFinite() &&
              s.components.noise_prec.allFinite(),
          "state: component parameters must be positive and finite");
  require((s.dp.a.array() > 0).all() && (s.dp.b.array() > 0).all() &&
              s.dp.w1 > 0 && s.dp.w2 > 0,
          "state: Beta/Gamma parameters must be positive");
  for (Index d = 0; d < s.dp.phi.rows(); ++d) {
    const auto row = s.dp.phi.row(d);
    require((row.array() >= 0).all() && (row.array() <= 1).all() &&
                std::abs(row.sum() - 1.0) <= 1e-10,
            "state: phi rows must lie on the simplex");
  }
  if (s.mode == ModelMode::kBgpLvm)
    require(t == 1, "state: bgplvm mode requires exactly one component");
  if (s.mode == ModelMode::kMrdFixed)
    require_shape(static_cast<Index>(s.assignment.size()) == s.dp.phi.rows(),
                  "state: mrd assignment length must equal D");
}

} // namespace dpgplvm

#endif // DPGPLVM_MODEL_HPP_
