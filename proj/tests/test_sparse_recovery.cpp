#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gfra/rng.hpp"
#include "gfra/sparse_recovery.hpp"
#include "gfra/system_model.hpp"

using namespace gfra;

namespace {

CMatrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  CMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.complex_normal();
  return m;
}

ExpandedDictionary gaussian_dict(int rows, int atoms, int guard, std::uint64_t seed) {
  SystemConfig c;
  c.seq_len = rows;
  c.n_sequences = atoms;
  c.guard = guard;
  c.max_delay = guard;
  c.n_active = 1;
  return expand_dictionary(build_spreading_pool(c, seed), guard);
}

// Least squares through the normal equations; independent of the solver's
// orthogonal decomposition.
CMatrix normal_equations_ls(const CMatrix& a, const CMatrix& y) {
  const CMatrix g = a.adjoint() * a;
  return g.llt().solve(a.adjoint() * y);
}

double nmse_db_of(const CMatrix& est, const CMatrix& truth) {
  return 10.0 * std::log10((est - truth).squaredNorm() / truth.squaredNorm());
}

}  // namespace

TEST(RowSoftThreshold, ScalesNormTwoRow) {
  CMatrix x(1, 2);
  x << Complex(2.0 * 0.6, 0.0), Complex(0.0, 2.0 * 0.8);
  const CMatrix out = row_soft_threshold(x, 1.0);
  EXPECT_NEAR(out.row(0).norm(), 1.0, 1e-15);
  EXPECT_NEAR((out - 0.5 * x).norm(), 0.0, 1e-15);
}

TEST(RowSoftThreshold, ClampsSmallRowsAndZeroRows) {
  CMatrix x(3, 2);
  x << 0.3, 0.4, 0.0, 0.0, 3.0, 4.0;
  const CMatrix out = row_soft_threshold(x, 0.5);
  EXPECT_EQ(out.row(0).norm(), 0.0);  // norm equals lambda
  EXPECT_EQ(out.row(1).norm(), 0.0);
  EXPECT_NEAR(out.row(2).norm(), 4.5, 1e-14);
}

TEST(RowSoftThreshold, ZeroLambdaIsIdentity) {
  Rng rng(1);
  const CMatrix x = random_matrix(rng, 6, 3);
  EXPECT_TRUE(row_soft_threshold(x, 0.0) == x);
}

TEST(RowSoftThreshold, NonExpansive) {
  Rng rng(2);
  for (int k = 0; k < 200; ++k) {
    const CMatrix a = random_matrix(rng, 5, 4);
    const CMatrix b = a + random_matrix(rng, 5, 4, 0.3);
    const double lam = 2.0 * rng.uniform01();
    EXPECT_LE((row_soft_threshold(a, lam) - row_soft_threshold(b, lam)).norm(), (a - b).norm() + 1e-12);
  }
}

TEST(PriorAidedThreshold, AllZeroMaskMatchesPlainThreshold) {
  Rng rng(3);
  const CMatrix x = random_matrix(rng, 7, 3);
  EXPECT_TRUE(prior_aided_threshold(x, 1.0, RowMask(7, 0)) == row_soft_threshold(x, 1.0));
}

TEST(PriorAidedThreshold, AllOneMaskIsIdentity) {
  Rng rng(4);
  const CMatrix x = random_matrix(rng, 7, 3);
  EXPECT_TRUE(prior_aided_threshold(x, 10.0, RowMask(7, 1)) == x);
}

TEST(PriorAidedThreshold, MaskedSmallRowSurvives) {
  // Two rows of norm 0.5 with lambda 1: only the masked one is kept.
  CMatrix x(2, 2);
  x << 0.3, 0.4, 0.4, 0.3;
  const CMatrix out = prior_aided_threshold(x, 1.0, RowMask{1, 0});
  EXPECT_TRUE(out.row(0) == x.row(0));
  EXPECT_EQ(out.row(1).norm(), 0.0);
}

TEST(PriorAidedThreshold, RejectsWrongMaskLength) {
  EXPECT_THROW(prior_aided_threshold(CMatrix::Ones(3, 1), 1.0, RowMask(2, 0)), DimensionError);
}

TEST(ExtractSupport, Examples) {
  EXPECT_TRUE(extract_support(CMatrix::Zero(4, 2), 0.0).empty());
  CMatrix x = CMatrix::Zero(4, 2);
  x(1, 0) = 1e-9;
  x(3, 1) = 2.0;
  EXPECT_EQ(extract_support(x, 0.0), (IndexSet{1, 3}));
  CMatrix y(2, 1);
  y << 0.1, 5.0;
  EXPECT_EQ(extract_support(y, 1.0), IndexSet{1});
  EXPECT_THROW(extract_support(y, -1.0), ConfigError);
}

TEST(LsReinitialize, EmptySupportGivesZero) {
  const auto dict = gaussian_dict(6, 10, 0, 1);
  Rng rng(5);
  const CMatrix out = ls_reinitialize(dict, {}, random_matrix(rng, 6, 2));
  EXPECT_EQ(out.rows(), 10);
  EXPECT_EQ(out.norm(), 0.0);
}

TEST(LsReinitialize, TrueSupportAndSupersetAreExact) {
  const auto dict = gaussian_dict(6, 10, 0, 2);
  Rng rng(6);
  CMatrix x = CMatrix::Zero(10, 2);
  x.row(2) = random_matrix(rng, 1, 2);
  x.row(7) = random_matrix(rng, 1, 2);
  const CMatrix y = dict.matrix() * x;
  EXPECT_NEAR((ls_reinitialize(dict, {2, 7}, y) - x).norm(), 0.0, 1e-12);

  const IndexSet super{1, 2, 5, 7};
  const CMatrix est = ls_reinitialize(dict, super, y);
  CMatrix a(6, 4);
  for (int k = 0; k < 4; ++k) a.col(k) = dict.matrix().col(super[static_cast<std::size_t>(k)]);
  const CMatrix oracle = normal_equations_ls(a, y);
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR((est.row(super[static_cast<std::size_t>(k)]) - oracle.row(k)).norm(), 0.0, 1e-10);
  }
  EXPECT_NEAR((est - x).norm(), 0.0, 1e-10);
}

TEST(LsReinitialize, RejectsOversizedSupport) {
  const auto dict = gaussian_dict(3, 6, 0, 3);
  try {
    ls_reinitialize(dict, {0, 1, 2, 3}, CMatrix::Ones(3, 1));
    FAIL() << "expected an error";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("support exceeds measurement dimension"), std::string::npos);
  }
}

TEST(AmpConfig, Validation) {
  AmpConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_iters = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AmpConfig{};
  c.alpha = {1.0, -0.5};
  EXPECT_THROW(c.validate(), ConfigError);
  c = AmpConfig{};
  c.unroll.delta = -2.0;  // negative values other than the "auto" marker
  EXPECT_NO_THROW(c.validate());
}

TEST(AmpMmv, ZeroObservationStaysZero) {
  const auto dict = gaussian_dict(8, 16, 0, 4);
  const auto r = amp_mmv(CMatrix::Zero(8, 3), dict, AmpConfig{});
  EXPECT_EQ(r.x_hat.norm(), 0.0);
  EXPECT_EQ(r.x_hat.rows(), 16);
}

TEST(AmpMmv, RejectsDimensionMismatchAndNonFinite) {
  const auto dict = gaussian_dict(8, 16, 0, 4);
  EXPECT_THROW(amp_mmv(CMatrix::Zero(7, 2), dict, AmpConfig{}), DimensionError);
  CMatrix y = CMatrix::Ones(8, 2);
  y(3, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(amp_mmv(y, dict, AmpConfig{}), NumericalError);
}

// Oracle: exhaustive least squares over every single-row support.
TEST(AmpMmv, NoiselessOneSparseMatchesExhaustiveOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto dict = gaussian_dict(8, 16, 0, 100 + seed);
    Rng rng(seed);
    const int row = rng.uniform_int(0, 15);
    CMatrix x = CMatrix::Zero(16, 2);
    x.row(row) = random_matrix(rng, 1, 2);
    const CMatrix y = dict.matrix() * x;

    int best = -1;
    double best_res = std::numeric_limits<double>::infinity();
    for (int j = 0; j < 16; ++j) {
      const CMatrix a = dict.matrix().col(j);
      const double res = (y - a * normal_equations_ls(a, y)).norm();
      if (res < best_res) best_res = res, best = j;
    }
    ASSERT_EQ(best, row);

    AmpConfig cfg;
    cfg.alpha = {1.1};
    cfg.n_iters = 50;
    const auto r = amp_mmv(y, dict, cfg);
    // Off-support rows shrink with the residual but need not be exactly zero.
    const double peak = r.x_hat.rowwise().norm().maxCoeff();
    EXPECT_EQ(extract_support(r.x_hat, 1e-3 * peak), IndexSet{best}) << "seed " << seed;
    EXPECT_LE(nmse_db_of(r.x_hat, x), -60.0) << "seed " << seed;
  }
}

TEST(AmpMmv, RecordsResidualEveryIteration) {
  const auto dict = gaussian_dict(20, 40, 0, 5);
  Rng rng(7);
  CMatrix x = CMatrix::Zero(40, 2);
  for (int k = 0; k < 3; ++k) x.row(5 * k + 1) = random_matrix(rng, 1, 2);
  CMatrix y = dict.matrix() * x + random_matrix(rng, 20, 2, 0.01);
  AmpConfig cfg;
  cfg.n_iters = 30;
  cfg.stop_tol = 0.0;
  const auto r = amp_mmv(y, dict, cfg);
  EXPECT_EQ(r.residual_norms.size(), 30u);
  ASSERT_EQ(r.stage_iterations.size(), 1u);
  EXPECT_EQ(r.stage_iterations[0], 30);
}

TEST(AmpMmv, EarlyStopOnConvergence) {
  const auto dict = gaussian_dict(20, 40, 0, 5);
  Rng rng(8);
  CMatrix x = CMatrix::Zero(40, 1);
  x(3, 0) = 1.0;
  AmpConfig cfg;
  cfg.n_iters = 500;
  cfg.stop_tol = 1e-6;
  const auto r = amp_mmv(dict.matrix() * x, dict, cfg);
  EXPECT_LT(r.stage_iterations[0], 500);
}

TEST(AmpBp, SingleSlotEqualsAmpMmv) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto dict = gaussian_dict(18, 10, 2, 200 + seed);
    Rng rng(seed);
    CMatrix x = CMatrix::Zero(30, 2);
    for (int k = 0; k < 3; ++k) x.row(rng.uniform_int(0, 29)) = random_matrix(rng, 1, 2);
    const CMatrix y = dict.matrix() * x + random_matrix(rng, 20, 2, 0.05);
    AmpConfig cfg;
    const auto a = amp_mmv(y, dict, cfg);
    const auto b = amp_bp(y, dict, cfg, 2, 1);
    EXPECT_LE((a.x_hat - b.x_hat).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(b.support_history.empty());
  }
}

TEST(AmpBp, RejectsBadColumnCount) {
  const auto dict = gaussian_dict(8, 16, 0, 4);
  EXPECT_THROW(amp_bp(CMatrix::Zero(8, 5), dict, AmpConfig{}, 1, 4), DimensionError);
}

// Three users with full data length: stage L finds the support, later stages
// reproduce x_true through least squares (oracle: normal equations on the
// true support with the full observation).
TEST(AmpBp, NoiselessFullLengthUsersReproduceLeastSquares) {
  SystemConfig c;
  c.n_sequences = 8;
  c.seq_len = 16;
  c.guard = 2;
  c.max_delay = 2;
  c.n_active = 3;
  const auto dict = expand_dictionary(build_spreading_pool(c, 9), c.guard);
  Rng rng(10);
  const IndexSet rows{2, 10, 19};
  CMatrix x = CMatrix::Zero(dict.n_atoms(), c.n_columns());
  for (int r : rows) x.row(r) = random_matrix(rng, 1, c.n_columns());
  const CMatrix y = dict.matrix() * x;

  const auto res = amp_bp(y, dict, AmpConfig{}, 1, c.n_slots());
  ASSERT_EQ(res.support_history.size(), 3u);
  for (const auto& s : res.support_history) EXPECT_EQ(s, rows);

  CMatrix a(dict.n_rows(), 3);
  for (int k = 0; k < 3; ++k) a.col(k) = dict.matrix().col(rows[static_cast<std::size_t>(k)]);
  const CMatrix oracle = normal_equations_ls(a, y);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR((res.x_hat.row(rows[static_cast<std::size_t>(k)]) - oracle.row(k)).norm(), 0.0, 1e-8);
  }
  EXPECT_LE((y - dict.matrix() * res.x_hat).norm() / y.norm(), 1e-8);
}

TEST(AmpBp, NoiselessRealizationsAttainSmallResidual) {
  SystemConfig c;
  c.n_sequences = 8;
  c.seq_len = 16;
  c.guard = 2;
  c.max_delay = 2;
  c.n_active = 3;
  const auto pool = build_spreading_pool(c, 9);
  const auto dict = expand_dictionary(pool, c.guard);
  int checked = 0;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto real = draw_realization(c, pool, s);
    const CMatrix y = dict.matrix() * real.x_true;
    const auto res = amp_bp(y, dict, AmpConfig{}, 1, c.n_slots());
    IndexSet truth;
    for (const auto& u : real.users) truth.push_back(real.row_of(u));
    std::sort(truth.begin(), truth.end());
    truth.erase(std::unique(truth.begin(), truth.end()), truth.end());
    if (extract_support(res.x_hat, 1e-6 * res.x_hat.norm()) != truth) continue;
    ++checked;
    EXPECT_LE((y - dict.matrix() * res.x_hat).norm() / y.norm(), 1e-8) << "seed " << s;
  }
  EXPECT_GE(checked, 25);
}

TEST(AmpBp, ResidualHistoryCoversEveryStage) {
  const auto dict = gaussian_dict(20, 10, 3, 11);
  Rng rng(12);
  CMatrix x = CMatrix::Zero(40, 4);
  x.row(5) = random_matrix(rng, 1, 4);
  x.block(17, 0, 1, 2) = random_matrix(rng, 1, 2);
  const CMatrix y = dict.matrix() * x + random_matrix(rng, 23, 4, 0.01);
  AmpConfig cfg;
  cfg.stop_tol = 0.0;
  cfg.n_iters = 12;
  const auto r = amp_bp(y, dict, cfg, 1, 4);
  EXPECT_EQ(r.stage_iterations, (std::vector<int>{12, 12, 12, 12}));
  EXPECT_EQ(r.residual_norms.size(), 48u);
}

TEST(Threshold, MedianRowNorm) {
  CMatrix x = CMatrix::Zero(5, 1);
  x(0, 0) = 1.0;
  x(1, 0) = 3.0;
  x(2, 0) = 2.0;
  EXPECT_DOUBLE_EQ(median_row_norm(x), 1.0);
  UnrollOptions o;
  o.delta = 0.7;
  EXPECT_DOUBLE_EQ(support_threshold(o, x), 0.7);
  o.delta = -1.0;
  o.delta_scale = 3.0;
  EXPECT_DOUBLE_EQ(support_threshold(o, x), 3.0);
}
