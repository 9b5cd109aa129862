#pragma once

#include "diffrl/dataset.hpp"
#include "diffrl/policy_value.hpp"
#include "diffrl/qlearning.hpp"
#include "diffrl/rng.hpp"
#include "diffrl/schedule.hpp"
#include "diffrl/simulators.hpp"
#include "diffrl/types.hpp"

namespace diffrl {

// Policy-gradient fine-tuning of a pretrained mean network against the
// terminal reward, optionally anchored to the pretrained model by the exact
// per-step Gaussian KL.  Never touches the dataset.
enum class BaselineAlgo {
  Ddpo,  // reward only (gamma forced to 0)
  Dpok,  // reward plus gamma-weighted KL anchor
};

struct BaselineConfig {
  BaselineAlgo algo = BaselineAlgo::Dpok;
  double gamma = 1.0;
  SamplerKind kind = SamplerKind::SdeEuler;  // stochastic kinds only
  TimeGrid grid;
  int episodes = 0;
  int batch = 1;
  double lr = 1e-3;
  RewardSpec reward;  // beta weighs the terminal reward

  void validate() const;
};

struct BaselineResult {
  GaussianPolicy policy;
  std::vector<EpisodeStats> stats;  // mean_signal carries the mean KL sum
  bool diverged = false;
  std::string diverged_reason;
};

// KL between two Gaussian transitions with equal covariance sigma2 * I.
double onestep_kl(const Vector& mean_a, const Vector& mean_b, double sigma2);

// REINFORCE on the trajectory log-likelihood with a leave-one-out batch mean
// reward baseline, plus the analytic gradient of the gamma-weighted sum of
// one-step KLs to the pretrained transitions.  The fine-tuned network starts
// from the pretrained parameters.
BaselineResult baseline_train(const BaselineConfig& cfg,
                              const DiffusionSchedule& sched,
                              const GaussianPolicy& pretrained,
                              const RngStream& root,
                              const EpisodeCallback& callback = {});

}  // namespace diffrl
