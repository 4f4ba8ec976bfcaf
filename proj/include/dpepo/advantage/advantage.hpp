#pragma once

// Group-relative advantages and the clipped surrogate.
//
//   phi_traj = (R - mean(R_group)) / max(std(R_group), eps)    population std
//   phi_step = r_step            if phi_traj > 0
//              2 - r_step        otherwise
//   phi      = phi_step * phi_traj

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dpepo/error.hpp"
#include "dpepo/trajectory.hpp"

namespace dpepo::advantage {

struct AdvantageConfig {
  double eps = 1e-6;
  double clip = 0.2;

  void validate() const {
    if (!(eps > 0.0)) throw Error(ErrorKind::configuration, "advantage.eps must be > 0");
    if (!(clip > 0.0)) throw Error(ErrorKind::configuration, "advantage.clip must be > 0");
  }

  friend bool operator==(const AdvantageConfig&, const AdvantageConfig&) = default;
};

/// N rollouts of one task.
struct TrajectoryGroup {
  std::string task_id;
  std::vector<Trajectory> members;

  std::vector<double> rewards() const {
    std::vector<double> r;
    r.reserve(members.size());
    for (const auto& m : members) r.push_back(m.r_traj);
    return r;
  }
};

struct GroupStatistics {
  double mean = 0.0;
  double std = 0.0;
};

inline GroupStatistics group_statistics(std::span<const double> rewards) {
  GroupStatistics s;
  if (rewards.empty()) return s;
  for (double r : rewards) s.mean += r;
  s.mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(var / static_cast<double>(rewards.size()));
  return s;
}

inline std::vector<double> trajectory_advantages(std::span<const double> rewards, double eps) {
  if (rewards.size() < 2) {
    throw Error(ErrorKind::usage, "group advantages need at least two members, got " +
                                      std::to_string(rewards.size()));
  }
  if (!(eps > 0.0)) throw Error(ErrorKind::usage, "eps must be > 0");
  const auto stats = group_statistics(rewards);
  const double denom = std::max(stats.std, eps);
  std::vector<double> phi;
  phi.reserve(rewards.size());
  for (double r : rewards) phi.push_back((r - stats.mean) / denom);
  return phi;
}

inline std::vector<double> trajectory_advantages(const TrajectoryGroup& group, double eps) {
  const auto r = group.rewards();
  return trajectory_advantages(std::span<const double>(r), eps);
}

inline double step_advantage(double r_step, double phi_traj) {
  return phi_traj > 0.0 ? r_step : 2.0 - r_step;
}

inline double combined_advantage(double phi_step, double phi_traj) { return phi_step * phi_traj; }

struct StepAdvantage {
  double r_step = 0.0;
  double phi_step = 0.0;
  double phi = 0.0;

  friend bool operator==(const StepAdvantage&, const StepAdvantage&) = default;
};

struct AdvantageRecord {
  double phi_traj = 0.0;
  std::vector<StepAdvantage> per_step;
};

/// Uses the step rewards already stored on `traj.steps`.
inline AdvantageRecord advantage_record(const Trajectory& traj, double phi_traj) {
  AdvantageRecord rec;
  rec.phi_traj = phi_traj;
  rec.per_step.reserve(traj.steps.size());
  for (const auto& step : traj.steps) {
    const double phi_step = step_advantage(step.reward.r_step, phi_traj);
    rec.per_step.push_back({step.reward.r_step, phi_step, combined_advantage(phi_step, phi_traj)});
  }
  return rec;
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(ErrorKind::numeric, std::string(what) + " is not finite");
}

/// -min(r * phi, clamp(r, 1 - clip, 1 + clip) * phi), r = exp(logp_new - logp_old).
inline double surrogate_loss(double logp_new, double logp_old, double phi, double clip) {
  require_finite(logp_new, "logp_new");
  require_finite(logp_old, "logp_old");
  require_finite(phi, "phi");
  if (!(clip > 0.0)) throw Error(ErrorKind::usage, "clip must be > 0");
  const double ratio = std::exp(logp_new - logp_old);
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return -std::min(ratio * phi, clipped * phi);
}

/// d surrogate_loss / d logp_new. Zero wherever the clipped branch is active.
inline double surrogate_loss_grad(double logp_new, double logp_old, double phi, double clip) {
  const double ratio = std::exp(logp_new - logp_old);
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  if (ratio * phi <= clipped * phi) return -phi * ratio;
  return 0.0;
}

}  // namespace dpepo::advantage
