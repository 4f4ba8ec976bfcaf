#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dpepo/advantage/advantage.hpp"

using namespace dpepo;
using namespace dpepo::advantage;

namespace {

std::vector<double> phi_of(std::vector<double> rewards, double eps = 1e-6) {
  return trajectory_advantages(std::span<const double>(rewards), eps);
}

}  // namespace

TEST(TrajectoryAdvantage, Fixtures) {
  EXPECT_EQ(phi_of({1, 1, 0, 0}), (std::vector<double>{1, 1, -1, -1}));
  EXPECT_EQ(phi_of({1, 0}), (std::vector<double>{1, -1}));
  EXPECT_EQ(phi_of({0, 0, 0, 0}), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_EQ(phi_of({1, 1, 1}), (std::vector<double>{0, 0, 0}));
}

TEST(TrajectoryAdvantage, PopulationStd) {
  // mean 0.25, population std sqrt(3)/4.
  const auto phi = phi_of({1, 0, 0, 0});
  EXPECT_NEAR(phi[0], 0.75 / (std::sqrt(3.0) / 4), 1e-15);
  EXPECT_NEAR(phi[1], -0.25 / (std::sqrt(3.0) / 4), 1e-15);
}

TEST(TrajectoryAdvantage, SmallGroupsAndBadEpsRejected) {
  EXPECT_THROW(phi_of({1}), Error);
  EXPECT_THROW(phi_of({}), Error);
  EXPECT_THROW(phi_of({1, 0}, 0.0), Error);
}

TEST(TrajectoryAdvantage, ZeroSumAndShiftInvariance) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> r(2 + rng() % 15);
    for (auto& v : r) v = rng() % 3 == 0 ? u(rng) : static_cast<double>(rng() % 2);
    const auto stats = group_statistics(r);
    if (stats.std <= 1e-6) continue;
    const auto phi = phi_of(r);
    EXPECT_NEAR(std::accumulate(phi.begin(), phi.end(), 0.0), 0.0, 1e-9);
    const double c = u(rng);
    auto shifted = r;
    for (auto& v : shifted) v += c;
    const auto phi2 = phi_of(shifted);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(phi[i], phi2[i], 1e-9);
  }
}

TEST(StepAdvantage, BranchFixtures) {
  EXPECT_EQ(step_advantage(2.0, 1.0), 2.0);
  EXPECT_EQ(step_advantage(2.0, -1.0), 0.0);
  EXPECT_EQ(step_advantage(1.5, 0.0), 0.5);
}

TEST(CombinedAdvantage, Fixtures) {
  EXPECT_EQ(combined_advantage(2.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(combined_advantage(0.1, -1.0), -0.1);
  EXPECT_EQ(combined_advantage(1.7, 0.0), 0.0);
}

TEST(CombinedAdvantage, MonotoneInStepRewardAndBounded) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> r_step(1e-6, 2.0);
  std::uniform_real_distribution<double> mag(1e-3, 4.0);
  for (int i = 0; i < 10000; ++i) {
    const double sign = i % 2 == 0 ? 1.0 : -1.0;
    const double phi_traj = sign * mag(rng);
    double lo = r_step(rng), hi = r_step(rng);
    if (lo == hi) continue;
    if (lo > hi) std::swap(lo, hi);
    const double phi_lo = combined_advantage(step_advantage(lo, phi_traj), phi_traj);
    const double phi_hi = combined_advantage(step_advantage(hi, phi_traj), phi_traj);
    EXPECT_LT(phi_lo, phi_hi) << "phi_traj " << phi_traj << " r " << lo << " " << hi;
    EXPECT_LE(std::abs(phi_hi), 2 * std::abs(phi_traj) + 1e-12);
    const double ps = step_advantage(hi, phi_traj);
    EXPECT_GE(ps, 0.0);
    EXPECT_LE(ps, 2.0);
    if (ps > 0) EXPECT_EQ(std::signbit(phi_hi), std::signbit(phi_traj));
  }
}

TEST(AdvantageRecord, UsesStoredStepRewards) {
  Trajectory traj;
  for (double r : {2.0, 1.5, 0.5}) {
    ParallelStep s;
    s.reward.r_step = r;
    traj.steps.push_back(s);
  }
  const auto rec = advantage_record(traj, -1.0);
  ASSERT_EQ(rec.per_step.size(), 3u);
  EXPECT_EQ(rec.per_step[0].phi, 0.0);
  EXPECT_EQ(rec.per_step[1].phi, -0.5);
  EXPECT_EQ(rec.per_step[2].phi, -1.5);
}

TEST(Surrogate, Fixtures) {
  EXPECT_DOUBLE_EQ(surrogate_loss(-1.0, -1.0, 0.7, 0.2), -0.7);
  EXPECT_NEAR(surrogate_loss(std::log(2.0), 0.0, 1.5, 0.2), -1.2 * 1.5, 1e-15);
  EXPECT_EQ(surrogate_loss(-0.3, -2.0, 0.0, 0.2), 0.0);
  // Negative advantage with a large ratio is not clipped (pessimistic bound).
  EXPECT_NEAR(surrogate_loss(std::log(2.0), 0.0, -1.0, 0.2), 2.0, 1e-15);
}

TEST(Surrogate, NonFiniteIsNumericError) {
  try {
    surrogate_loss(std::nan(""), 0.0, 1.0, 0.2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
  EXPECT_THROW(surrogate_loss(0.0, 0.0, INFINITY, 0.2), Error);
  EXPECT_THROW(surrogate_loss(0.0, 0.0, 1.0, 0.0), Error);
}

TEST(Surrogate, GradientMatchesDifferences) {
  std::mt19937_64 rng(47);
  std::normal_distribution<double> n(0, 0.3);
  for (int i = 0; i < 500; ++i) {
    const double old = -1.0, phi = n(rng) * 3, lp = old + n(rng);
    const double ratio = std::exp(lp - old);
    if (std::abs(ratio - 0.8) < 1e-4 || std::abs(ratio - 1.2) < 1e-4) continue;
    const double h = 1e-6;
    const double fd = (surrogate_loss(lp + h, old, phi, 0.2) - surrogate_loss(lp - h, old, phi, 0.2)) / (2 * h);
    EXPECT_NEAR(surrogate_loss_grad(lp, old, phi, 0.2), fd, 1e-7);
  }
}
