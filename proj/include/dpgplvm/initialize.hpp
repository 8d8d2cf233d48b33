#ifndef DPGPLVM_INITIALIZE_HPP_
#define DPGPLVM_INITIALIZE_HPP_

#include "dpgplvm/model.hpp"
#include "dpgplvm/transform.hpp"

#include <Eigen/SVD>

#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace dpgplvm {

/// Column-centered principal component scores (U_Q S_Q, unscaled) of Y.
/// Unobserved entries are replaced by their column mean first.
inline Matrix pca_scores(const DataMatrix &y, Index q) {
  const Index n = y.rows();
  const Index d = y.cols();
  Matrix centered(n, d);
  for (Index c = 0; c < d; ++c) {
    double sum = 0.0;
    Index count = 0;
    for (Index r = 0; r < n; ++r)
      if (y.mask(r, c)) {
        sum += y.values(r, c);
        ++count;
      }
    const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
    for (Index r = 0; r < n; ++r)
      centered(r, c) = y.mask(r, c) ? y.values(r, c) - mean : 0.0;
  }
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  const Vector &sv = svd.singularValues();
  const double tol = static_cast<double>(std::max(n, d)) *
                     std::numeric_limits<double>::epsilon() *
                     (sv.size() > 0 ? sv[0] : 0.0);
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv[i] > tol)
      ++rank;
  if (rank < q)
    throw InitializationError("initialize: data has rank " +
                                  std::to_string(rank) +
                                  ", fewer than the " + std::to_string(q) +
                                  " latent dimensions requested",
                              rank);
  return svd.matrixU().leftCols(q) * sv.head(q).asDiagonal();
}

/// Starting state: PCA means, unit variances, inducing inputs on a random
/// subset of the means, and log-Normal / softmax-Normal draws for the rest.
///
/// In kBgpLvm mode T is forced to 1; in kMrdFixed mode T becomes the number of
/// distinct labels in `groups` and phi is one-hot at those labels.
inline ModelState initialize(const DataMatrix &y, ModelConfig config,
                             ModelMode mode = ModelMode::kDpGpLvm,
                             const std::vector<int> &groups = {}) {
  config.n = static_cast<std::size_t>(y.rows());
  config.d = static_cast<std::size_t>(y.cols());
  std::vector<int> assignment;
  if (mode == ModelMode::kBgpLvm) {
    config.t = 1;
  } else if (mode == ModelMode::kMrdFixed) {
    if (static_cast<Index>(groups.size()) != y.cols())
      throw StructuralError("initialize: mrd needs one group label per column");
    assignment = densify_labels(groups);
    config.t = static_cast<std::size_t>(
        *std::max_element(assignment.begin(), assignment.end()) + 1);
  }
  validate(config);
  const std::size_t m = config.inducing_count();
  config.m = m;
  validate(y, m);

  const auto q = static_cast<Index>(config.q);
  const auto t = static_cast<Index>(config.t);
  const auto n = y.rows();
  const auto d = y.cols();

  ModelState s;
  s.mode = mode;
  s.assignment = assignment;
  s.latent.mu = pca_scores(y, q);
  s.latent.sigma = Matrix::Ones(n, q);

  std::mt19937_64 rng(config.seed);
  const auto rows =
      detail::sample_without_replacement(n, static_cast<Index>(m), rng);
  s.latent.xu.resize(static_cast<Index>(m), q);
  for (std::size_t i = 0; i < m; ++i)
    s.latent.xu.row(static_cast<Index>(i)) = s.latent.mu.row(rows[i]);

  std::lognormal_distribution<double> lognormal(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw_lognormal = [&](Index k) {
    Vector v(k);
    for (Index i = 0; i < k; ++i)
      v[i] = lognormal(rng);
    return v;
  };

  s.dp.a = draw_lognormal(t - 1);
  s.dp.b = draw_lognormal(t - 1);
  if (mode == ModelMode::kDpGpLvm) {
    Matrix logits(d, t);
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < t; ++c)
        logits(r, c) = normal(rng);
    s.dp.phi = detail::softmax_rows(logits);
  } else if (mode == ModelMode::kBgpLvm) {
    s.dp.phi = Matrix::Ones(d, 1);
  } else {
    s.dp.phi = one_hot_phi(assignment, t);
  }
  s.components.signal_var = draw_lognormal(t);
  s.components.ard.resize(t, q);
  for (Index r = 0; r < t; ++r)
    s.components.ard.row(r) = draw_lognormal(q).transpose();
  s.components.noise_prec = draw_lognormal(t);
  s.dp.w1 = config.s1;
  s.dp.w2 = config.s2;
  s.config = config;
  return s;
}

} // namespace dpgplvm

#endif // DPGPLVM_INITIALIZE_HPP_
