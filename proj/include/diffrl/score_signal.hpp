#pragma once

#include <optional>
#include <vector>

#include "diffrl/dataset.hpp"
#include "diffrl/rng.hpp"
#include "diffrl/schedule.hpp"
#include "diffrl/types.hpp"

namespace diffrl {

// Ratio-form score estimate from raw data points.  epsilon floors the
// posterior weights: when every transition log-density falls below
// log(epsilon) the weights are replaced by uniform ones and the result is
// flagged low-confidence.
struct SignalConfig {
  int m = 300;              // subsample size per estimate; 0 < m <= dataset size
  double epsilon = 1e-20;
};

struct ScoreEstimate {
  Vector value;
  bool low_confidence = false;
};

// Estimate of the score of the time-t noised data distribution at x:
//   (1/var(t)) * (-x + decay(0,t) * sum_i w_i x_i),
// with w_i a softmax over transition log-densities of an m-point subsample.
// With m equal to the dataset size the estimate is deterministic and equals
// the score of the empirical noised distribution.  When `condition` is set,
// only points whose condition matches exactly are candidates; fewer matches
// than m shrinks the subsample, zero matches is an error.
ScoreEstimate ratio_score(const SignalConfig& cfg, const DiffusionSchedule& sched,
                          const Dataset& ds, double t, const Vector& x,
                          RngStream& rng,
                          const std::optional<Vector>& condition = std::nullopt);

// Running reward at reverse time t_rev for state y and action a:
//   -g(T - t_rev)^2 * |score_estimate(T - t_rev, y) - a|^2.
// Forward time T - t_rev must be positive.
struct SignalValue {
  double value = 0.0;
  bool low_confidence = false;
};

SignalValue running_reward_signal(const SignalConfig& cfg,
                                  const DiffusionSchedule& sched,
                                  const Dataset& ds, double t_rev,
                                  const Vector& y, const Vector& a,
                                  RngStream& rng,
                                  const std::optional<Vector>& condition = std::nullopt);

// Bias/variance/MSE of the subsampled estimator against the full-pool
// estimate, per (t, m) pair.  Query states are standard normal draws, the
// same cloud distribution at every t.
struct DiagnosticsRow {
  double t = 0.0;
  int m = 0;
  double bias_l1 = 0.0;   // mean over states of |bias vector|_1
  double variance = 0.0;  // mean trace of the repeat covariance
  double mse = 0.0;       // mean over states and repeats of |err|^2
};

std::vector<DiagnosticsRow> estimator_diagnostics(
    const std::vector<int>& m_list, const DiffusionSchedule& sched,
    const Dataset& pool, const std::vector<double>& t_list, int n_states,
    int n_repeats, RngStream& rng);

}  // namespace diffrl
