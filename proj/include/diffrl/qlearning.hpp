#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffrl/dataset.hpp"
#include "diffrl/nets.hpp"
#include "diffrl/policy_value.hpp"
#include "diffrl/rng.hpp"
#include "diffrl/schedule.hpp"
#include "diffrl/score_signal.hpp"
#include "diffrl/simulators.hpp"
#include "diffrl/types.hpp"

namespace diffrl {

enum class UpdateRule { Adam, Sa };
enum class TerminalValue { Anchor, Learned };
enum class LrDecay { Constant, InvSqrt };

struct DiscreteConditionDist {
  std::vector<Vector> values;
  Vector probs;  // sums to 1
};

struct TrainConfig {
  SamplerKind kind = SamplerKind::SdeEuler;
  TimeGrid grid;
  int episodes = 0;
  int batch = 1;
  double theta = 1.0;
  double lr_actor = 1e-3;
  double lr_critic = 1e-3;
  UpdateRule update_rule = UpdateRule::Adam;
  LrDecay lr_decay = LrDecay::Constant;  // multiplier on SA step sizes
  double lr_decay_scale = 1000.0;
  TerminalValue terminal_value = TerminalValue::Anchor;
  double boundary_penalty = 1.0;  // Learned mode only
  SignalConfig signal;
  RewardSpec reward;  // beta lives here
  std::vector<int> hidden = {64, 64};
  std::optional<DiscreteConditionDist> condition_dist;
  std::optional<Vector> init_actor;   // warm-start mean network parameters
  std::optional<Vector> init_critic;

  void validate(int data_dim) const;
};

struct EpisodeStats {
  int episode = 0;
  double loss = 0.0;
  double mean_terminal_reward = 0.0;
  double mean_signal = 0.0;
  double grad_norm_actor = 0.0;
  double grad_norm_critic = 0.0;
  int low_confidence = 0;
  int aborts = 0;    // trajectories dropped within the episode
  int skipped = 0;   // 1 if the whole episode produced no update
  double wall_ms = 0.0;  // not part of the deterministic stats stream
};

struct TrainResult {
  GaussianPolicy policy;
  ValueFunction critic;
  std::vector<EpisodeStats> stats;
  bool diverged = false;
  std::string diverged_reason;
};

using EpisodeCallback = std::function<void(
    const EpisodeStats&, const GaussianPolicy&, const ValueFunction&)>;

// Temporal-difference residual for step i of a trajectory:
//   G_i = Jhat_{i+1} - J(t_i, y_i) + signal_i dt - q(t_i, y_i, a_i) dt,
// where Jhat_{i+1} is J(t_{i+1}, y_{i+1}) for interior steps and, at the last
// step, beta h(y_K) (Anchor) or J(horizon, y_K) (Learned); Jhat is a constant
// with respect to the critic parameters everywhere.
struct TdContext {
  double beta = 0.0;
  TerminalValue terminal_value = TerminalValue::Anchor;
  double boundary_penalty = 1.0;
};

double td_residual(const ValueFunction& vf, const GaussianPolicy& pol,
                   const TrajectoryRow& row, const TimeGrid& grid, int i,
                   const TdContext& ctx);

// Per-trajectory update directions: critic_dir = sum_i xi_i G_i with
// xi = dJ/dTheta, actor_dir = sum_i zeta_i G_i with zeta = dq/dpsi.  These
// equal -1/2 d/dTheta sum_i G_i^2 (Jhat frozen) and -1/(2 dt) d/dpsi of the
// same sum.  In Learned mode critic_dir also carries the boundary penalty
// term -(penalty) (J(horizon,y_K) - beta h) xi(horizon,y_K).
struct EpisodeGradients {
  Vector critic_dir;
  Vector actor_dir;
  double loss = 0.0;  // sum_i G_i^2 (+ penalty term in Learned mode)
};

EpisodeGradients episode_gradients(const ValueFunction& vf,
                                   const GaussianPolicy& pol,
                                   const TrajectoryRow& row,
                                   const TimeGrid& grid, const TdContext& ctx);

// B trajectories advanced in lockstep; trajectory b draws from
// episode_stream.derive(b), so results match b independent single rollouts.
// Aborted trajectories (non-finite values) are dropped and counted via the
// returned abort count.
TrajectoryBatch rollout_batch(SamplerKind kind, const DiffusionSchedule& sched,
                              const TimeGrid& grid, const GaussianPolicy& pol,
                              const RewardSpec& reward,
                              const SignalConfig& signal, const Dataset& ds,
                              const RngStream& episode_stream, int batch,
                              int* aborts,
                              const std::optional<Vector>& condition = std::nullopt);

// Actor-critic training driven by score signals from the dataset.  All
// randomness derives from `root`; identical inputs give bit-identical
// results.  When cfg.condition_dist is set, each episode draws one condition
// shared by the batch and conditions networks, signals, and rollouts on it.
TrainResult train(const TrainConfig& cfg, const DiffusionSchedule& sched,
                  const Dataset& ds, const RngStream& root,
                  const EpisodeCallback& callback = {});

// train() with a required condition distribution.
TrainResult train_conditional(const TrainConfig& cfg,
                              const DiffusionSchedule& sched, const Dataset& ds,
                              const RngStream& root,
                              const EpisodeCallback& callback = {});

}  // namespace diffrl
