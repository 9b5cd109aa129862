#include "diffrl/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffrl {

namespace {

void check_time_range(const DiffusionSchedule& sched, double s, double t) {
  if (!(s >= 0.0) || !(s <= t) || !(t <= sched.horizon))
    throw std::domain_error("schedule: need 0 <= s <= t <= horizon");
}

// int_0^t beta for the linear beta(t) = beta_min + slope * t.
double beta_integral(const DiffusionSchedule& sched, double t) {
  const double slope = (sched.beta_max - sched.beta_min) / sched.horizon;
  return sched.beta_min * t + 0.5 * slope * t * t;
}

}  // namespace

DiffusionSchedule DiffusionSchedule::constant(double f0, double g0,
                                              double horizon) {
  if (!(f0 >= 0.0)) throw std::invalid_argument("schedule: f0 must be >= 0");
  if (!(g0 > 0.0)) throw std::invalid_argument("schedule: g0 must be > 0");
  if (!(horizon > 0.0))
    throw std::invalid_argument("schedule: horizon must be > 0");
  DiffusionSchedule s;
  s.kind = ScheduleKind::Constant;
  s.horizon = horizon;
  s.f0 = f0;
  s.g0 = g0;
  return s;
}

DiffusionSchedule DiffusionSchedule::ddpm_linear(double beta_min,
                                                 double beta_max,
                                                 double horizon) {
  if (!(beta_min > 0.0) || !(beta_max >= beta_min))
    throw std::invalid_argument("schedule: need 0 < beta_min <= beta_max");
  if (!(horizon > 0.0))
    throw std::invalid_argument("schedule: horizon must be > 0");
  DiffusionSchedule s;
  s.kind = ScheduleKind::DdpmLinear;
  s.horizon = horizon;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  return s;
}

double DiffusionSchedule::beta(double t) const {
  if (kind != ScheduleKind::DdpmLinear)
    throw std::domain_error("schedule: beta() requires the ddpm_linear kind");
  return beta_min + (beta_max - beta_min) * (t / horizon);
}

double DiffusionSchedule::f(double t) const {
  switch (kind) {
    case ScheduleKind::Constant:
      return f0;
    case ScheduleKind::DdpmLinear:
      return 0.5 * beta(t);
  }
  return 0.0;
}

double DiffusionSchedule::g(double t) const {
  switch (kind) {
    case ScheduleKind::Constant:
      return g0;
    case ScheduleKind::DdpmLinear:
      return std::sqrt(beta(t));
  }
  return 0.0;
}

double decay_factor(const DiffusionSchedule& sched, double s, double t) {
  check_time_range(sched, s, t);
  switch (sched.kind) {
    case ScheduleKind::Constant:
      return std::exp(-sched.f0 * (t - s));
    case ScheduleKind::DdpmLinear:
      return std::exp(-0.5 * (beta_integral(sched, t) - beta_integral(sched, s)));
  }
  return 0.0;
}

double marginal_var(const DiffusionSchedule& sched, double t) {
  check_time_range(sched, 0.0, t);
  switch (sched.kind) {
    case ScheduleKind::Constant: {
      const double f0 = sched.f0, g0 = sched.g0;
      if (f0 == 0.0) return g0 * g0 * t;
      return g0 * g0 * (1.0 - std::exp(-2.0 * f0 * t)) / (2.0 * f0);
    }
    case ScheduleKind::DdpmLinear:
      // Variance preserving: decay(0,t)^2 + var(t) = 1.
      return 1.0 - std::exp(-beta_integral(sched, t));
  }
  return 0.0;
}

PriorSpec make_prior(const DiffusionSchedule& sched, int dim) {
  if (dim <= 0) throw std::invalid_argument("prior: dim must be positive");
  return PriorSpec{dim, marginal_var(sched, sched.horizon)};
}

Vector prior_sample(const PriorSpec& prior, RngStream& rng) {
  return std::sqrt(prior.variance) * rng.normal_vector(prior.dim);
}

double transition_logdensity(const DiffusionSchedule& sched, double t,
                             const Vector& x, const Vector& x0) {
  if (!(t > 0.0))
    throw std::domain_error("transition_logdensity: t must be positive");
  if (x.size() != x0.size())
    throw std::invalid_argument("transition_logdensity: dimension mismatch");
  const double var = marginal_var(sched, t);
  const double decay = decay_factor(sched, 0.0, t);
  const double d = static_cast<double>(x.size());
  const double quad = (x - decay * x0).squaredNorm() / (2.0 * var);
  return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - quad;
}

Vector analytic_score(const DiffusionSchedule& sched, const GaussianMixture& mix,
                      double t, const Vector& x) {
  if (mix.components() == 0)
    throw std::invalid_argument("analytic_score: empty mixture");
  check_time_range(sched, 0.0, t);
  const double var = t > 0.0 ? marginal_var(sched, t) : 0.0;
  const double decay = t > 0.0 ? decay_factor(sched, 0.0, t) : 1.0;
  const int k = mix.components();
  const double d = static_cast<double>(x.size());

  // Posterior responsibilities via log-sum-exp, then the weighted sum of
  // per-component Gaussian scores -(x - m_k) / v_k.
  Vector logw(k);
  Matrix comp_scores(x.size(), k);
  for (int i = 0; i < k; ++i) {
    const Vector m = decay * mix.means[i];
    const double v = decay * decay * mix.variances[i] + var;
    const Vector r = x - m;
    logw[i] = std::log(mix.weights[i]) - 0.5 * d * std::log(2.0 * std::numbers::pi * v) -
              r.squaredNorm() / (2.0 * v);
    comp_scores.col(i) = -r / v;
  }
  const double lmax = logw.maxCoeff();
  Vector w = (logw.array() - lmax).exp();
  w /= w.sum();
  return comp_scores * w;
}

}  // namespace diffrl
