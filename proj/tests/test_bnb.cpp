#include <gtest/gtest.h>

#include <cmath>

#include "cellfree/bnb.hpp"
#include "support.hpp"

using namespace cellfree;
using cellfree::testing::small_instance;

namespace {

BnbOptions with_relaxation(Relaxation r) {
  BnbOptions o;
  o.formulation.relaxation = r;
  return o;
}

}  // namespace

TEST(Bnb, MatchesExhaustiveEnumeration) {
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    const int M = 4 + static_cast<int>(seed % 3), K = 2 + static_cast<int>(seed % 2);
    const Precoder pc = seed % 4 < 2 ? Precoder::kMrt : Precoder::kFzf;
    const ProblemInstance in = small_instance(100 + seed, M, K, pc);
    const ExhaustiveResult ex = solve_exhaustive(in);
    ASSERT_EQ(ex.failures, 0) << seed;
    for (Relaxation r : {Relaxation::kSquaredActivity, Relaxation::kPerspective}) {
      const BnbResult b = solve_exact(in, with_relaxation(r));
      if (ex.status == BnbStatus::kInfeasible) {
        EXPECT_EQ(b.status, BnbStatus::kInfeasible) << seed;
        continue;
      }
      ++compared;
      ASSERT_EQ(b.status, BnbStatus::kOptimal) << seed;
      EXPECT_NEAR(b.objective, ex.objective, 1e-4 * ex.objective) << seed;
      EXPECT_TRUE(b.allocation.feasible);
      EXPECT_LE(b.lower_bound, b.objective);
      EXPECT_EQ(b.counters.lb_monotonicity_violations, 0) << seed;
      EXPECT_EQ(b.counters.solver_failures, 0) << seed;
      // Full binary tree over M activity variables.
      EXPECT_LE(b.counters.boxes_created, (1L << (M + 1)) - 1);
    }
  }
  EXPECT_GT(compared, 30);
}

TEST(Bnb, GapTrajectoryNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const BnbResult b = solve_exact(small_instance(seed, 6, 3), with_relaxation(Relaxation::kPerspective));
    if (b.status != BnbStatus::kOptimal) continue;
    for (std::size_t i = 1; i < b.gap_trajectory.size(); ++i)
      EXPECT_LE(b.gap_trajectory[i], b.gap_trajectory[i - 1] + 1e-12) << seed;
    EXPECT_LE(b.gap, 1e-6);
  }
}

TEST(Bnb, NodeCapStopsWithValidBounds) {
  const ProblemInstance in = small_instance(7, 6, 3);
  BnbOptions o;
  o.node_cap = 3;
  const BnbResult b = solve_exact(in, o);
  ASSERT_TRUE(b.status == BnbStatus::kBudgetExceeded || b.status == BnbStatus::kOptimal);
  EXPECT_LE(b.counters.boxes_created, 3);
  const ExhaustiveResult ex = solve_exhaustive(in);
  EXPECT_LE(b.lower_bound, ex.objective * (1 + 1e-6));
  EXPECT_GE(b.objective, ex.objective * (1 - 1e-6));
  EXPECT_NEAR(b.gap, (b.objective - b.lower_bound) / b.objective, 1e-12);
}

TEST(Bnb, SeedSetsOnlyTightenIncumbent) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const ProblemInstance in = small_instance(seed, 5, 2);
    const BnbResult plain = solve_exact(in);
    BnbOptions o;
    o.initial_active_sets = {{4, 1, 1}, {}, {0, 9}, {2}};
    const BnbResult seeded = solve_exact(in, o);
    ASSERT_EQ(plain.status, seeded.status);
    if (plain.status == BnbStatus::kOptimal) {
      EXPECT_NEAR(plain.objective, seeded.objective, 1e-6 * plain.objective);
    }
  }
}

TEST(Bnb, SingleAp) {
  int feasible = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ProblemInstance in = small_instance(seed, 1, 2, Precoder::kMrt, 0.5);
    const BnbResult b = solve_exact(in);
    const SolvedProgram fx = solve_formulation(in, build_fixed_set(in, {0}));
    if (fx.ok()) {
      ++feasible;
      ASSERT_EQ(b.status, BnbStatus::kOptimal);
      EXPECT_NEAR(b.objective, fx.allocation.power.total, 1e-9 * b.objective);
      EXPECT_EQ(b.allocation.active, std::vector<int>{0});
    } else {
      EXPECT_EQ(b.status, BnbStatus::kInfeasible);
    }
  }
  EXPECT_GT(feasible, 0);
}

TEST(Bnb, NoRequirementsSwitchesEverythingOff) {
  const ProblemInstance in = small_instance(3, 5, 3, Precoder::kMrt, 0.0);
  const BnbResult b = solve_exact(in);
  EXPECT_EQ(b.status, BnbStatus::kOptimal);
  EXPECT_EQ(b.objective, 0.0);
  EXPECT_TRUE(b.allocation.active.empty());
  EXPECT_TRUE(b.allocation.feasible);
  EXPECT_EQ(solve_exhaustive(in).objective, 0.0);
}

TEST(Bnb, UnreachableTargetIsInfeasible) {
  const ProblemInstance in = small_instance(1, 4, 2, Precoder::kMrt, 12.0);
  EXPECT_EQ(solve_exact(in).status, BnbStatus::kInfeasible);
  EXPECT_EQ(solve_exhaustive(in).status, BnbStatus::kInfeasible);
}

TEST(Bnb, RejectsTooManyAps) {
  ProblemInstance in = small_instance(1, 2, 1);
  in.stats.beta = Eigen::MatrixXd::Constant(64, 1, 1e-10);
  EXPECT_THROW(solve_exact(in), std::invalid_argument);
  EXPECT_THROW(solve_exhaustive(in), std::invalid_argument);
}
