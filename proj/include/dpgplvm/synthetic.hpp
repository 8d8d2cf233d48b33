#ifndef DPGPLVM_SYNTHETIC_HPP_
#define DPGPLVM_SYNTHETIC_HPP_

#include "dpgplvm/kernels.hpp"
#include "dpgplvm/model.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace dpgplvm {

/// Observed dimensions that share one generating function.
struct SyntheticGroup {
  std::vector<Index> dims;    // 0-based observed dimensions
  std::vector<Index> latents; // 0-based active latent dimensions
  double sigma2 = 1.0;
  double gamma = 1.0;
  double beta = 100.0;
};

struct SyntheticSpec {
  Index n = 100;
  Index d = 20;
  Index q_true = 3;
  std::vector<SyntheticGroup> groups;
  std::uint64_t seed = 0;

  /// Twenty dimensions from three latents: dims 1-10 use latents {1,2},
  /// dims 11-20 use latents {1,3}.
  static SyntheticSpec standard(std::uint64_t seed = 0) {
    SyntheticSpec s;
    s.seed = seed;
    SyntheticGroup first, second;
    for (Index i = 0; i < 10; ++i) {
      first.dims.push_back(i);
      second.dims.push_back(10 + i);
    }
    first.latents = {0, 1};
    second.latents = {0, 2};
    s.groups = {first, second};
    return s;
  }
};

inline void validate(const SyntheticSpec &spec) {
  using detail::require;
  require(spec.n >= 1 && spec.d >= 1 && spec.q_true >= 1,
          "synthetic: n, d and q_true must be positive");
  require(!spec.groups.empty(), "synthetic: at least one group is required");
  std::vector<int> seen(static_cast<std::size_t>(spec.d), 0);
  for (const auto &g : spec.groups) {
    require(g.sigma2 > 0 && g.gamma >= 0 && g.beta > 0,
            "synthetic: group parameters must be positive");
    for (Index dim : g.dims) {
      require(dim >= 0 && dim < spec.d, "synthetic: dimension out of range");
      ++seen[static_cast<std::size_t>(dim)];
    }
    for (Index l : g.latents)
      require(l >= 0 && l < spec.q_true, "synthetic: latent out of range");
  }
  require(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }),
          "synthetic: groups must partition the observed dimensions");
}

struct SyntheticData {
  DataMatrix y;
  std::vector<int> labels; // 1-based group id per dimension
  Matrix x_true;
};

/// Draws X from N(0, I), then every dimension of a group from that group's GP
/// prior (ARD weight `gamma` on its active latents, zero elsewhere) plus
/// Gaussian noise of precision `beta`.
inline SyntheticData generate(const SyntheticSpec &spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticData out;
  out.x_true.resize(spec.n, spec.q_true);
  for (Index i = 0; i < spec.n; ++i)
    for (Index q = 0; q < spec.q_true; ++q)
      out.x_true(i, q) = normal(rng);

  Matrix y(spec.n, spec.d);
  out.labels.assign(static_cast<std::size_t>(spec.d), 0);
  for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const auto &g = spec.groups[gi];
    Vector gamma = Vector::Zero(spec.q_true);
    for (Index l : g.latents)
      gamma[l] = g.gamma;
    Matrix k = ard_se(out.x_true, out.x_true, g.sigma2, gamma);
    Matrix chol;
    double jitter = 1e-6 * g.sigma2;
    for (int attempt = 0;; ++attempt) {
      Matrix kj = k;
      kj.diagonal().array() += jitter;
      try {
        chol = detail::cholesky_lower(kj, "synthetic kernel");
        break;
      } catch (const SingularKernelError &) {
        if (attempt == 1)
          throw;
        jitter *= 2.0;
      }
    }
    const double noise_sd = 1.0 / std::sqrt(g.beta);
    for (Index dim : g.dims) {
      Vector z(spec.n);
      for (Index i = 0; i < spec.n; ++i)
        z[i] = normal(rng);
      Vector col = chol * z;
      for (Index i = 0; i < spec.n; ++i)
        col[i] += noise_sd * normal(rng);
      y.col(dim) = col;
      out.labels[static_cast<std::size_t>(dim)] = static_cast<int>(gi) + 1;
    }
  }
  out.y = DataMatrix(std::move(y));
  return out;
}

struct GroupingScore {
  double accuracy = 0.0;
  Index n_effective = 0;
};

namespace detail {

/// Maximum-weight perfect matching on a square matrix (Hungarian algorithm,
/// O(n^3)). Returns col_of_row.
inline std::vector<Index> max_weight_matching(const Matrix &weight) {
  const Index n = weight.rows();
  const double big = weight.size() > 0 ? weight.maxCoeff() : 0.0;
  // Minimize cost = big - weight with 1-based potentials.
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0),
      v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0),
      way(static_cast<std::size_t>(n + 1), 0);
  const double inf = std::numeric_limits<double>::infinity();
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju])
          continue;
        const double cur = (big - weight(i0 - 1, j - 1)) -
                           u[static_cast<std::size_t>(i0)] - v[ju];
        if (cur < minv[ju]) {
          minv[ju] = cur;
          way[ju] = j0;
        }
        if (minv[ju] < delta) {
          delta = minv[ju];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju]) {
          u[static_cast<std::size_t>(p[ju])] += delta;
          v[ju] -= delta;
        } else {
          minv[ju] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> col_of_row(static_cast<std::size_t>(n), 0);
  for (Index j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] > 0)
      col_of_row[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] =
          j - 1;
  return col_of_row;
}

} // namespace detail

/// Row-wise argmax of phi; ties go to the lowest component index.
inline std::vector<Index> hard_assignment(const Matrix &phi) {
  std::vector<Index> out(static_cast<std::size_t>(phi.rows()), 0);
  for (Index d = 0; d < phi.rows(); ++d) {
    Index best = 0;
    for (Index k = 1; k < phi.cols(); ++k)
      if (phi(d, k) > phi(d, best))
        best = k;
    out[static_cast<std::size_t>(d)] = best;
  }
  return out;
}

/// Agreement between hard assignments and true labels under the best
/// one-to-one relabeling, plus the number of components holding more than
/// `mass_threshold * D` of the responsibility mass.
inline GroupingScore grouping_score(const Matrix &phi,
                                    const std::vector<int> &truth,
                                    double mass_threshold = 0.05) {
  detail::require_shape(static_cast<Index>(truth.size()) == phi.rows(),
                        "grouping_score: one label per dimension required");
  detail::require(mass_threshold > 0 && mass_threshold < 1,
                  "grouping_score: threshold must lie in (0,1)");
  const auto labels = densify_labels(truth);
  const Index n_labels =
      labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  const Index t = phi.cols();
  const Index size = std::max(t, n_labels);
  Matrix counts = Matrix::Zero(size, size);
  const auto hard = hard_assignment(phi);
  for (std::size_t d = 0; d < hard.size(); ++d)
    counts(hard[d], labels[d]) += 1.0;
  const auto match = detail::max_weight_matching(counts);
  double agree = 0.0;
  for (Index k = 0; k < size; ++k)
    agree += counts(k, match[static_cast<std::size_t>(k)]);

  GroupingScore score;
  score.accuracy = phi.rows() > 0 ? agree / static_cast<double>(phi.rows()) : 0.0;
  const Vector mass = phi.colwise().sum().transpose();
  for (Index k = 0; k < t; ++k)
    if (mass[k] > mass_threshold * static_cast<double>(phi.rows()))
      ++score.n_effective;
  return score;
}

/// Masks the intersection of ceil(frac_rows N) random rows and
/// ceil(frac_dims D) random columns. Fails before touching the mask if any
/// chosen column would keep fewer than `min_observed` observed rows.
inline DataMatrix mask_random(const DataMatrix &y, double frac_rows,
                              double frac_dims, std::uint64_t seed,
                              Index min_observed = 1) {
  detail::require(frac_rows > 0 && frac_rows < 1 && frac_dims > 0 &&
                      frac_dims < 1,
                  "mask_random: fractions must lie in (0,1)");
  const Index n_rows =
      static_cast<Index>(std::ceil(frac_rows * static_cast<double>(y.rows())));
  const Index n_cols =
      static_cast<Index>(std::ceil(frac_dims * static_cast<double>(y.cols())));
  std::mt19937_64 rng(seed);
  auto rows = detail::sample_without_replacement(y.rows(), n_rows, rng);
  auto cols = detail::sample_without_replacement(y.cols(), n_cols, rng);
  std::sort(rows.begin(), rows.end());
  std::sort(cols.begin(), cols.end());
  for (Index c : cols) {
    Index lost = 0;
    for (Index r : rows)
      lost += y.mask(r, c) ? 1 : 0;
    if (y.observed_in_column(c) - lost < min_observed)
      throw InputError("mask_random: column " + std::to_string(c) +
                       " would keep fewer than " +
                       std::to_string(min_observed) + " observed rows");
  }
  DataMatrix out = y;
  for (Index r : rows)
    for (Index c : cols)
      out.mask(r, c) = false;
  return out;
}

} // namespace dpgplvm

#endif // DPGPLVM_SYNTHETIC_HPP_
