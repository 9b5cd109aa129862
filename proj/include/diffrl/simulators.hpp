#pragma once

#include <optional>
#include <vector>

#include "diffrl/dataset.hpp"
#include "diffrl/policy_value.hpp"
#include "diffrl/rng.hpp"
#include "diffrl/schedule.hpp"
#include "diffrl/score_signal.hpp"
#include "diffrl/types.hpp"

namespace diffrl {

// Uniform grid on [0, horizon] in reverse time: t_i = i * dt, i = 0..steps.
struct TimeGrid {
  double horizon = 0.0;
  int steps = 0;

  double dt() const { return horizon / steps; }
  double time(int i) const { return i * dt(); }
  void validate() const;
};

enum class SamplerKind {
  SdeEuler,   // Euler-Maruyama on the reverse SDE; any schedule
  DdpmStyle,  // discrete denoising update; ddpm_linear schedules only
  OdeEuler,   // probability-flow Euler; constant f = 0, g = sqrt(2) only
  Ddim,       // denoising implicit update; constant f = 0, g = sqrt(2) only
};

bool sampler_is_stochastic(SamplerKind kind);

// Rejects (kind, schedule, grid) combinations outside each sampler's domain,
// including DdpmStyle steps where beta * dt >= 1.
void validate_sampler(SamplerKind kind, const DiffusionSchedule& sched,
                      const TimeGrid& grid);

// One reverse-time update from t_i to t_{i+1} under action a.  Schedule
// functions are always evaluated at forward time horizon - t_i; this helper
// owns that flip.  Stochastic kinds consume exactly dim draws, ODE kinds none.
Vector sampler_step(SamplerKind kind, const DiffusionSchedule& sched,
                    const TimeGrid& grid, int i, const Vector& y,
                    const Vector& a, RngStream& rng);

// One training trajectory: states y_0..y_K, actions, reward signals, and
// the terminal reward h(y_K) (unweighted).
struct TrajectoryRow {
  Matrix states;           // d x (steps + 1)
  Matrix actions;          // d x steps
  Vector signals;          // steps
  double terminal_reward = 0.0;
  int low_confidence = 0;  // flagged score signals
  std::optional<Vector> condition;
};

struct TrajectoryBatch {
  TimeGrid grid;
  std::vector<TrajectoryRow> rows;
};

// Samples y_0 from the prior, then alternates policy action, reward signal,
// and sampler step.  Per step the trajectory stream provides action noise
// then step noise; signal subsampling uses a derived per-step substream.
TrajectoryRow rollout(SamplerKind kind, const DiffusionSchedule& sched,
                      const TimeGrid& grid, const GaussianPolicy& pol,
                      const RewardSpec& reward, const SignalConfig& signal,
                      const Dataset& ds, RngStream& rng,
                      const std::optional<Vector>& condition = std::nullopt);

// Inference: n terminal samples under the policy mean (no action noise, no
// reward signals, no dataset access).  Column j is trajectory j, driven by
// the stream rng.derive("gen").derive(j).
Matrix generate(SamplerKind kind, const DiffusionSchedule& sched,
                const TimeGrid& grid, const GaussianPolicy& pol, int n,
                RngStream& rng,
                const std::optional<Vector>& condition = std::nullopt);

}  // namespace diffrl
