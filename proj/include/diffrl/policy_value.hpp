#pragma once

#include <optional>

#include "diffrl/nets.hpp"
#include "diffrl/rng.hpp"
#include "diffrl/schedule.hpp"
#include "diffrl/types.hpp"

namespace diffrl {

// Gaussian control policy for the reverse-time dynamics.  The mean comes
// from a network over (tau, y[, c]) where tau = T - t_rev is the noising
// time still to be undone; keying the nets on tau (not on t_rev) lets a
// checkpoint trained at one horizon warm-start a run at another, since the
// score the action plays depends on tau alone.  The covariance is the
// closed form theta / (2 g(tau)^2) * I and is never learned.
struct GaussianPolicy {
  MlpSpec mean_spec;
  Vector psi;          // mean network parameters
  double theta = 0.0;  // exploration temperature, > 0
  DiffusionSchedule sched;

  int state_dim() const { return mean_spec.output_dim(); }
};

// Scalar state-value approximation over (tau, y[, c]).
struct ValueFunction {
  MlpSpec spec;
  Vector params;
};

// Stacks (tau, y, c) into a network input column; tau is the noising time
// (horizon - t_rev), so it runs from T at the prior down to 0 at the data.
Vector net_input(double tau, const Vector& y,
                 const std::optional<Vector>& c = std::nullopt);

double policy_stddev(const GaussianPolicy& pol, double t_rev);

Vector policy_mean(const GaussianPolicy& pol, double t_rev, const Vector& y,
                   const std::optional<Vector>& c = std::nullopt);

// Draws from N(mean, stddev^2 I); requires t_rev < horizon.  Throws
// EpisodeAbort if the mean network emits a non-finite value.
Vector policy_sample(const GaussianPolicy& pol, double t_rev, const Vector& y,
                     RngStream& rng,
                     const std::optional<Vector>& c = std::nullopt);

// Closed-form state-action value consistent with the policy:
//   q = -g^2 |a - mean|^2 - (theta d / 2) log(pi theta / g^2),
// with g evaluated at forward time T - t_rev.  exp(q / theta) integrates to
// one over actions, and log pi(a) = q / theta exactly.
double q_value(const GaussianPolicy& pol, double t_rev, const Vector& y,
               const Vector& a, const std::optional<Vector>& c = std::nullopt);

double policy_logdensity(const GaussianPolicy& pol, double t_rev,
                         const Vector& y, const Vector& a,
                         const std::optional<Vector>& c = std::nullopt);

// d q / d psi = 2 g^2 (a - mean)^T d mean / d psi.
Vector q_grad_psi(const GaussianPolicy& pol, double t_rev, const Vector& y,
                  const Vector& a, const std::optional<Vector>& c = std::nullopt);

struct ValueAndGrad {
  double value = 0.0;
  Vector grad;
};

// Value and parameter gradient at noising time tau (the raw net feature;
// callers convert from reverse time as tau = horizon - t_rev).
ValueAndGrad value_and_grad(const ValueFunction& vf, double tau,
                            const Vector& y,
                            const std::optional<Vector>& c = std::nullopt);

// Raised when a rollout must be abandoned (non-finite network output or
// state); the training loop catches it and counts the episode.
struct EpisodeAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace diffrl
