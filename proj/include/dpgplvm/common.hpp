#ifndef DPGPLVM_COMMON_HPP_
#define DPGPLVM_COMMON_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpgplvm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Shapes or lengths that do not agree.
class StructuralError : public Error {
public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
public:
  using Error::Error;
};

/// A precondition on argument values is violated.
class InputError : public Error {
public:
  using Error::Error;
};

class InitializationError : public Error {
public:
  InitializationError(const std::string &what, Index achieved_rank)
      : Error(what), rank_(achieved_rank) {}
  Index achieved_rank() const noexcept { return rank_; }

private:
  Index rank_;
};

/// Cholesky factorization failed; carries the 0-based leading minor that was
/// not positive.
class SingularKernelError : public Error {
public:
  SingularKernelError(const std::string &what, Index minor)
      : Error(what + " (leading minor " + std::to_string(minor) + ")"),
        minor_(minor) {}
  Index failing_minor() const noexcept { return minor_; }

private:
  Index minor_;
};

namespace detail {

inline void require(bool cond, const char *msg) {
  if (!cond)
    throw InputError(msg);
}

inline void require_shape(bool cond, const std::string &msg) {
  if (!cond)
    throw StructuralError(msg);
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived> &m, const char *what) {
  if (!m.allFinite())
    throw NumericError(std::string("non-finite entry in ") + what);
}

/// Lower Cholesky factor with the failing minor reported. Eigen's LLT only
/// reports success/failure, so the factorization is done by hand.
inline Matrix cholesky_lower(const Matrix &a, const char *what = "kernel") {
  const Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (Index k = 0; k < j; ++k)
      diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag))
      throw SingularKernelError(std::string("Cholesky failed for ") + what, j);
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Index k = 0; k < j; ++k)
        s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

/// Solves L X = B for lower-triangular L.
inline Matrix solve_lower(const Matrix &l, const Matrix &b) {
  return l.triangularView<Eigen::Lower>().solve(b);
}

/// Solves L^T X = B for lower-triangular L.
inline Matrix solve_upper_t(const Matrix &l, const Matrix &b) {
  return l.transpose().triangularView<Eigen::Upper>().solve(b);
}

/// (L L^T)^{-1} B
inline Matrix chol_solve(const Matrix &l, const Matrix &b) {
  return solve_upper_t(l, solve_lower(l, b));
}

/// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
template <typename Rng>
std::vector<Index> sample_without_replacement(Index n, Index k, Rng &rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    idx[static_cast<std::size_t>(i)] = i;
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

inline double log_det_from_chol(const Matrix &l) {
  return 2.0 * l.diagonal().array().log().sum();
}

} // namespace detail

} // namespace dpgplvm

#endif // DPGPLVM_COMMON_HPP_
