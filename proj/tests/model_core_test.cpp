#include "test_util.hpp"

#include <gtest/gtest.h>

namespace dpgplvm {
namespace {

using testing::random_instance;
using testing::random_matrix;

ModelConfig small_config() {
  ModelConfig c;
  c.q = 2;
  c.t = 3;
  c.m = 5;
  c.seed = 17;
  return c;
}

TEST(Transform, ZeroRawGivesUnitPositive) {
  std::mt19937_64 rng(1);
  auto inst = random_instance(rng, 5, 4, 2, 3, 3);
  const auto layout = ParameterLayout::of(inst.state);
  Vector raw = to_unconstrained(inst.state);
  raw[layout.log_signal_var] = 0.0;
  raw[layout.log_noise_prec + 1] = 0.0;
  raw[layout.log_w1] = 0.0;
  const auto s = from_unconstrained(raw, inst.state);
  EXPECT_EQ(s.components.signal_var[0], 1.0);
  EXPECT_EQ(s.components.noise_prec[1], 1.0);
  EXPECT_EQ(s.dp.w1, 1.0);
}

TEST(Transform, ZeroLogitsGiveUniformRow) {
  std::mt19937_64 rng(2);
  auto inst = random_instance(rng, 5, 4, 2, 3, 3);
  const auto layout = ParameterLayout::of(inst.state);
  Vector raw = to_unconstrained(inst.state);
  raw.segment(layout.phi_logits, 3).setZero();
  const auto s = from_unconstrained(raw, inst.state);
  for (Index k = 0; k < 3; ++k)
    EXPECT_NEAR(s.dp.phi(0, k), 1.0 / 3.0, 1e-15);
}

TEST(Transform, SignalVarianceRoundTrip) {
  std::mt19937_64 rng(3);
  auto inst = random_instance(rng, 5, 4, 2, 2, 3);
  inst.state.components.signal_var[0] = 2.5;
  const auto back =
      from_unconstrained(to_unconstrained(inst.state), inst.state);
  EXPECT_NEAR(back.components.signal_var[0], 2.5, 2.5e-12);
}

double relative_gap(const Matrix &a, const Matrix &b) {
  double worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) {
      const double scale = std::max(std::abs(a(i, j)), 1e-300);
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / scale);
    }
  return worst;
}

class RoundTrip : public ::testing::TestWithParam<ModelMode> {};

TEST_P(RoundTrip, IdentityOnRandomStates) {
  std::mt19937_64 rng(40 + static_cast<int>(GetParam()));
  for (int rep = 0; rep < 20; ++rep) {
    const Index t = GetParam() == ModelMode::kBgpLvm ? 1 : 3;
    auto inst = random_instance(rng, 7, 5, 2, t, 4, GetParam());
    const auto &s = inst.state;
    const auto back = from_unconstrained(to_unconstrained(s), s);
    EXPECT_LT(relative_gap(s.latent.mu, back.latent.mu), 1e-12);
    EXPECT_LT(relative_gap(s.latent.sigma, back.latent.sigma), 1e-12);
    EXPECT_LT(relative_gap(s.latent.xu, back.latent.xu), 1e-12);
    EXPECT_LT(relative_gap(s.components.signal_var, back.components.signal_var),
              1e-12);
    EXPECT_LT(relative_gap(s.components.ard, back.components.ard), 1e-12);
    EXPECT_LT(relative_gap(s.components.noise_prec, back.components.noise_prec),
              1e-12);
    EXPECT_LT(relative_gap(s.dp.phi, back.dp.phi), 1e-12);
    if (t > 1) {
      EXPECT_LT(relative_gap(s.dp.a, back.dp.a), 1e-12);
      EXPECT_LT(relative_gap(s.dp.b, back.dp.b), 1e-12);
    }
    EXPECT_NEAR(back.dp.w1, s.dp.w1, 1e-12 * s.dp.w1);
    EXPECT_NEAR(back.dp.w2, s.dp.w2, 1e-12 * s.dp.w2);
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, RoundTrip,
                         ::testing::Values(ModelMode::kDpGpLvm,
                                           ModelMode::kBgpLvm,
                                           ModelMode::kMrdFixed),
                         [](const auto &info) {
                           return std::string(to_string(info.param));
                         });

TEST(Transform, LengthMismatchIsStructural) {
  std::mt19937_64 rng(4);
  auto inst = random_instance(rng, 5, 4, 2, 2, 3);
  Vector raw = to_unconstrained(inst.state);
  Vector shorter = raw.head(raw.size() - 1);
  EXPECT_THROW(from_unconstrained(shorter, inst.state), StructuralError);
}

TEST(Transform, NonFiniteRawIsNumeric) {
  std::mt19937_64 rng(5);
  auto inst = random_instance(rng, 5, 4, 2, 2, 3);
  Vector raw = to_unconstrained(inst.state);
  raw[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(from_unconstrained(raw, inst.state), NumericError);
  raw[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(from_unconstrained(raw, inst.state), NumericError);
}

TEST(Transform, LayoutSizesPerMode) {
  std::mt19937_64 rng(6);
  const Index n = 5, d = 4, q = 2, m = 3;
  auto dp = random_instance(rng, n, d, q, 2, m);
  auto bgp = random_instance(rng, n, d, q, 1, m, ModelMode::kBgpLvm);
  auto mrd = random_instance(rng, n, d, q, 2, m, ModelMode::kMrdFixed);
  const Index shared = 2 * n * q + m * q;
  EXPECT_EQ(ParameterLayout::of(dp.state).size,
            shared + 2 + 2 * q + 2 + 1 + 1 + 2 + d * 2);
  EXPECT_EQ(ParameterLayout::of(bgp.state).size, shared + 1 + q + 1);
  EXPECT_EQ(ParameterLayout::of(mrd.state).size,
            shared + 2 + 2 * q + 2 + 1 + 1 + 2);
}

TEST(Initialize, RankOneDataGivesScaledSingularVector) {
  std::mt19937_64 rng(7);
  const Index n = 12, d = 5;
  const Matrix u = random_matrix(rng, n, 1);
  const Matrix v = random_matrix(rng, d, 1);
  const Matrix y = u * v.transpose();
  const Matrix centered = y.rowwise() - y.colwise().mean();
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  const Vector oracle = svd.matrixU().col(0) * svd.singularValues()[0];

  ModelConfig c = small_config();
  c.q = 1;
  c.t = 2;
  const auto s = initialize(DataMatrix(y), c);
  const double sign = s.latent.mu.col(0).dot(oracle) >= 0 ? 1.0 : -1.0;
  EXPECT_LT((sign * s.latent.mu.col(0) - oracle).norm(), 1e-10 * oracle.norm());
}

TEST(Initialize, StartingValues) {
  std::mt19937_64 rng(8);
  const DataMatrix y(random_matrix(rng, 15, 6));
  const auto c = small_config();
  const auto s = initialize(y, c);
  EXPECT_TRUE((s.latent.sigma.array() == 1.0).all());
  EXPECT_EQ(s.dp.w1, 1.0);
  EXPECT_EQ(s.dp.w2, 1.0);
  EXPECT_EQ(s.latent.xu.rows(), 5);
  EXPECT_EQ(s.t(), 3);
  EXPECT_EQ(s.dp.a.size(), 2);
  EXPECT_NO_THROW(validate(s));

  // Every inducing input is a distinct row of mu.
  std::vector<Index> used;
  for (Index j = 0; j < s.latent.xu.rows(); ++j) {
    Index found = -1;
    for (Index i = 0; i < s.latent.mu.rows(); ++i)
      if (s.latent.mu.row(i) == s.latent.xu.row(j))
        found = i;
    ASSERT_GE(found, 0);
    EXPECT_EQ(std::count(used.begin(), used.end(), found), 0);
    used.push_back(found);
  }
}

TEST(Initialize, PriorMatchesNonUnitGammaPrior) {
  std::mt19937_64 rng(9);
  const DataMatrix y(random_matrix(rng, 10, 5));
  auto c = small_config();
  c.s1 = 2.5;
  c.s2 = 0.75;
  const auto s = initialize(y, c);
  EXPECT_EQ(s.dp.w1, 2.5);
  EXPECT_EQ(s.dp.w2, 0.75);
}

TEST(Initialize, IsDeterministic) {
  std::mt19937_64 rng(10);
  const DataMatrix y(random_matrix(rng, 15, 6));
  const auto a = initialize(y, small_config());
  const auto b = initialize(y, small_config());
  EXPECT_EQ(to_unconstrained(a), to_unconstrained(b));
  auto other = small_config();
  other.seed = 18;
  EXPECT_NE(to_unconstrained(initialize(y, other)), to_unconstrained(a));
}

TEST(Initialize, RankDeficientDataNamesRank) {
  std::mt19937_64 rng(11);
  const Matrix y = random_matrix(rng, 10, 1) * random_matrix(rng, 1, 5);
  auto c = small_config();
  c.q = 2;
  try {
    initialize(DataMatrix(y), c);
    FAIL() << "expected an initialization error";
  } catch (const InitializationError &e) {
    EXPECT_EQ(e.achieved_rank(), 1);
  }
}

TEST(Initialize, MaskedEntriesAreMeanImputed) {
  std::mt19937_64 rng(12);
  Matrix values = random_matrix(rng, 12, 5);
  BoolMatrix mask = BoolMatrix::Constant(12, 5, true);
  mask(2, 1) = false;
  mask(7, 3) = false;
  Matrix filled = values;
  for (auto [r, c] : {std::pair<Index, Index>{2, 1}, {7, 3}}) {
    double sum = 0.0;
    for (Index i = 0; i < 12; ++i)
      if (i != r)
        sum += values(i, c);
    filled(r, c) = sum / 11.0;
  }
  values(2, 1) = 1e6; // must be ignored
  const Matrix a = pca_scores(DataMatrix(values, mask), 2);
  const Matrix b = pca_scores(DataMatrix(filled), 2);
  for (Index q = 0; q < 2; ++q) {
    const double sign = a.col(q).dot(b.col(q)) >= 0 ? 1.0 : -1.0;
    EXPECT_LT((sign * a.col(q) - b.col(q)).norm(), 1e-10 * b.norm());
  }
}

TEST(Initialize, BgpLvmHasOneComponent) {
  std::mt19937_64 rng(13);
  const DataMatrix y(random_matrix(rng, 10, 5));
  const auto s = initialize(y, small_config(), ModelMode::kBgpLvm);
  EXPECT_EQ(s.t(), 1);
  EXPECT_EQ(s.dp.phi, Matrix::Ones(5, 1));
  EXPECT_EQ(s.components.ard.rows(), 1);
}

TEST(Initialize, MrdPhiIsOneHotAtGroups) {
  std::mt19937_64 rng(14);
  const DataMatrix y(random_matrix(rng, 10, 5));
  const std::vector<int> groups{7, 7, 3, 3, 7};
  const auto s = initialize(y, small_config(), ModelMode::kMrdFixed, groups);
  EXPECT_EQ(s.t(), 2);
  EXPECT_EQ(s.assignment, (std::vector<int>{0, 0, 1, 1, 0}));
  for (Index d = 0; d < 5; ++d)
    EXPECT_EQ(s.dp.phi(d, s.assignment[static_cast<std::size_t>(d)]), 1.0);
  EXPECT_THROW(initialize(y, small_config(), ModelMode::kMrdFixed, {1, 2}),
               StructuralError);
}

TEST(Config, Validation) {
  auto c = small_config();
  c.n = 10;
  c.d = 5;
  EXPECT_NO_THROW(validate(c));
  auto bad = c;
  bad.q = 0;
  EXPECT_THROW(validate(bad), InputError);
  bad = c;
  bad.q = 5;
  EXPECT_THROW(validate(bad), InputError);
  bad = c;
  bad.t = 6;
  EXPECT_THROW(validate(bad), InputError);
  bad = c;
  bad.m = 11;
  EXPECT_THROW(validate(bad), InputError);
  bad = c;
  bad.jitter = 0.0;
  EXPECT_THROW(validate(bad), InputError);
  bad = c;
  bad.s2 = -1.0;
  EXPECT_THROW(validate(bad), InputError);
  bad = c;
  bad.optimizer.max_iters = 0;
  EXPECT_THROW(validate(bad), InputError);
  bad = c;
  bad.optimizer.elbo_tol = 0.0;
  EXPECT_THROW(validate(bad), InputError);
}

TEST(Config, DefaultInducingCount) {
  ModelConfig c;
  c.q = 3;
  c.n = 100;
  EXPECT_EQ(c.inducing_count(), 30u);
  c.n = 12;
  EXPECT_EQ(c.inducing_count(), 12u);
  c.m = 4;
  EXPECT_EQ(c.inducing_count(), 4u);
}

TEST(Data, ColumnsNeedEnoughObservedRows) {
  Matrix v = Matrix::Ones(4, 2);
  BoolMatrix mask = BoolMatrix::Constant(4, 2, true);
  mask(0, 1) = mask(1, 1) = false;
  const DataMatrix y(v, mask);
  EXPECT_NO_THROW(validate(y, 2));
  EXPECT_THROW(validate(y, 3), InputError);
  Matrix bad = v;
  bad(2, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(validate(DataMatrix(bad, mask), 1), NumericError);
  bad(2, 0) = 1.0;
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN(); // masked: ignored
  EXPECT_NO_THROW(validate(DataMatrix(bad, mask), 1));
  EXPECT_THROW(DataMatrix(v, BoolMatrix::Constant(3, 2, true)),
               StructuralError);
}

TEST(State, ValidationRejectsBrokenInvariants) {
  std::mt19937_64 rng(15);
  const auto inst = random_instance(rng, 5, 4, 2, 2, 3);
  EXPECT_NO_THROW(validate(inst.state));
  auto s = inst.state;
  s.latent.sigma(0, 0) = 0.0;
  EXPECT_THROW(validate(s), InputError);
  s = inst.state;
  s.dp.phi(1, 0) += 1e-6;
  EXPECT_THROW(validate(s), InputError);
  s = inst.state;
  s.components.ard.resize(3, 2);
  s.components.ard.setOnes();
  EXPECT_THROW(validate(s), StructuralError);
  s = inst.state;
  s.mode = ModelMode::kBgpLvm;
  EXPECT_THROW(validate(s), InputError);
}

TEST(Labels, DensifiedInOrderOfAppearance) {
  EXPECT_EQ(densify_labels({5, 2, 5, 9, 2}), (std::vector<int>{0, 1, 0, 2, 1}));
  EXPECT_THROW(one_hot_phi({0, 3}, 2), InputError);
}

} // namespace
} // namespace dpgplvm
