#pragma once

#include "diffrl/rng.hpp"
#include "diffrl/types.hpp"

namespace diffrl {

// Noising dynamics dx = -f(t) x dt + g(t) dB on [0, horizon], with closed-form
// decay and variance integrals (no quadrature).
enum class ScheduleKind {
  Constant,    // f(t) = f0 >= 0, g(t) = g0 > 0
  DdpmLinear,  // f(t) = beta(t)/2, g(t) = sqrt(beta(t)), beta linear in t
};

struct DiffusionSchedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double horizon = 0.0;  // T
  // Constant parameters.
  double f0 = 0.0;
  double g0 = 0.0;
  // DdpmLinear parameters: beta(0) and beta(horizon), per unit time.
  double beta_min = 0.0;
  double beta_max = 0.0;

  static DiffusionSchedule constant(double f0, double g0, double horizon);
  static DiffusionSchedule ddpm_linear(double beta_min, double beta_max,
                                       double horizon);

  double f(double t) const;
  double g(double t) const;
  double beta(double t) const;  // DdpmLinear only

  bool operator==(const DiffusionSchedule&) const = default;
};

// exp(-int_s^t f); requires 0 <= s <= t <= horizon.
double decay_factor(const DiffusionSchedule& sched, double s, double t);

// Var of x_t | x_0 = const: int_0^t decay(u,t)^2 g(u)^2 du; requires
// 0 <= t <= horizon.  Strictly increasing in t, -> 0 as t -> 0.
double marginal_var(const DiffusionSchedule& sched, double t);

// Terminal reference distribution N(0, variance * I_dim).
struct PriorSpec {
  int dim = 0;
  double variance = 0.0;
};

PriorSpec make_prior(const DiffusionSchedule& sched, int dim);
Vector prior_sample(const PriorSpec& prior, RngStream& rng);

// log N(x; decay(0,t) x0, marginal_var(t) I); requires 0 < t <= horizon.
double transition_logdensity(const DiffusionSchedule& sched, double t,
                             const Vector& x, const Vector& x0);

// Isotropic Gaussian mixture in R^d: weights w_k, means mu_k, variances
// var_k * I.  Used as a ground-truth model in tests and data generation.
struct GaussianMixture {
  Vector weights;               // sums to 1
  std::vector<Vector> means;    // one per component
  Vector variances;             // one per component, > 0

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
};

// Score of the time-t marginal when x_0 follows the mixture: each component
// becomes N(decay * mu_k, decay^2 var_k + marginal_var(t)).  t = 0 allowed.
Vector analytic_score(const DiffusionSchedule& sched, const GaussianMixture& mix,
                      double t, const Vector& x);

}  // namespace diffrl
