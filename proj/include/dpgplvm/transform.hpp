#ifndef DPGPLVM_TRANSFORM_HPP_
#define DPGPLVM_TRANSFORM_HPP_

#include "dpgplvm/model.hpp"

namespace dpgplvm {

/// Offsets of each parameter block inside the flat unconstrained vector.
///
/// Order: mu, log sigma, xu, log signal_var, log ard, log noise_prec, then
/// (when the DP is active) log a, log b, log w1, log w2, and finally the phi
/// logits when responsibilities are free. Matrices are stored row-major.
struct ParameterLayout {
  Index n = 0, q = 0, m = 0, t = 0, d = 0;
  bool has_dp = false;
  bool has_phi = false;

  Index mu = 0, log_sigma = 0, xu = 0;
  Index log_signal_var = 0, log_ard = 0, log_noise_prec = 0;
  Index log_a = 0, log_b = 0, log_w1 = 0, log_w2 = 0;
  Index phi_logits = 0;
  Index size = 0;

  static ParameterLayout of(const ModelState &s) {
    ParameterLayout p;
    p.n = s.latent.n();
    p.q = s.latent.q();
    p.m = s.latent.m();
    p.t = s.t();
    p.d = s.dp.phi.rows();
    p.has_dp = s.mode != ModelMode::kBgpLvm;
    p.has_phi = s.mode == ModelMode::kDpGpLvm;
    Index at = 0;
    auto take = [&at](Index len) {
      const Index start = at;
      at += len;
      return start;
    };
    p.mu = take(p.n * p.q);
    p.log_sigma = take(p.n * p.q);
    p.xu = take(p.m * p.q);
    p.log_signal_var = take(p.t);
    p.log_ard = take(p.t * p.q);
    p.log_noise_prec = take(p.t);
    if (p.has_dp) {
      p.log_a = take(p.t - 1);
      p.log_b = take(p.t - 1);
      p.log_w1 = take(1);
      p.log_w2 = take(1);
    }
    if (p.has_phi)
      p.phi_logits = take(p.d * p.t);
    p.size = at;
    return p;
  }
};

namespace detail {

template <typename Block>
void write_row_major(Vector &out, Index at, const Block &m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      out[at + i * m.cols() + j] = m(i, j);
}

inline Matrix read_row_major(const Vector &raw, Index at, Index rows,
                             Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      m(i, j) = raw[at + i * cols + j];
  return m;
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix &logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    auto e = (logits.row(r).array() - mx).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

} // namespace detail

/// Maps a constrained state to its unconstrained coordinates.
inline Vector to_unconstrained(const ModelState &s) {
  const auto p = ParameterLayout::of(s);
  Vector raw(p.size);
  detail::write_row_major(raw, p.mu, s.latent.mu);
  detail::write_row_major(raw, p.log_sigma, s.latent.sigma.array().log().matrix());
  detail::write_row_major(raw, p.xu, s.latent.xu);
  raw.segment(p.log_signal_var, p.t) = s.components.signal_var.array().log();
  detail::write_row_major(raw, p.log_ard, s.components.ard.array().log().matrix());
  raw.segment(p.log_noise_prec, p.t) = s.components.noise_prec.array().log();
  if (p.has_dp) {
    raw.segment(p.log_a, p.t - 1) = s.dp.a.array().log();
    raw.segment(p.log_b, p.t - 1) = s.dp.b.array().log();
    raw[p.log_w1] = std::log(s.dp.w1);
    raw[p.log_w2] = std::log(s.dp.w2);
  }
  if (p.has_phi) {
    // Exact zeros would map to -inf; 1e-300 is below anything softmax of a
    // finite logit row can produce alongside a unit-scale entry.
    const Matrix logits = s.dp.phi.array().max(1e-300).log().matrix();
    detail::write_row_major(raw, p.phi_logits, logits);
  }
  return raw;
}

/// Inverse of to_unconstrained. `skeleton` supplies config, mode, shapes and
/// any fixed quantities (phi in the fixed-assignment modes).
inline ModelState from_unconstrained(const Vector &raw,
                                     const ModelState &skeleton) {
  const auto p = ParameterLayout::of(skeleton);
  if (raw.size() != p.size)
    throw StructuralError("unconstrained vector has length " +
                          std::to_string(raw.size()) + ", expected " +
                          std::to_string(p.size));
  detail::require_finite(raw, "unconstrained parameter vector");

  ModelState s = skeleton;
  s.latent.mu = detail::read_row_major(raw, p.mu, p.n, p.q);
  s.latent.sigma =
      detail::read_row_major(raw, p.log_sigma, p.n, p.q).array().exp();
  s.latent.xu = detail::read_row_major(raw, p.xu, p.m, p.q);
  s.components.signal_var = raw.segment(p.log_signal_var, p.t).array().exp();
  s.components.ard =
      detail::read_row_major(raw, p.log_ard, p.t, p.q).array().exp();
  s.components.noise_prec = raw.segment(p.log_noise_prec, p.t).array().exp();
  if (p.has_dp) {
    s.dp.a = raw.segment(p.log_a, p.t - 1).array().exp();
    s.dp.b = raw.segment(p.log_b, p.t - 1).array().exp();
    s.dp.w1 = std::exp(raw[p.log_w1]);
    s.dp.w2 = std::exp(raw[p.log_w2]);
  }
  if (p.has_phi)
    s.dp.phi = detail::softmax_rows(
        detail::read_row_major(raw, p.phi_logits, p.d, p.t));
  return s;
}

} // namespace dpgplvm

#endif // DPGPLVM_TRANSFORM_HPP_
