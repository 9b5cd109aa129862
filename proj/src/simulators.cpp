#include "diffrl/simulators.hpp"

#include <cmath>
#include <stdexcept>

namespace diffrl {

void TimeGrid::validate() const {
  if (!(horizon > 0.0)) throw std::invalid_argument("grid: horizon must be > 0");
  if (steps <= 0) throw std::invalid_argument("grid: steps must be positive");
}

bool sampler_is_stochastic(SamplerKind kind) {
  return kind == SamplerKind::SdeEuler || kind == SamplerKind::DdpmStyle;
}

namespace {

bool is_score_flow_schedule(const DiffusionSchedule& sched) {
  return sched.kind == ScheduleKind::Constant && sched.f0 == 0.0 &&
         std::abs(sched.g0 * sched.g0 - 2.0) < 1e-12;
}

// DDIM coefficient sqrt((1 - alpha)/alpha) with alpha(t) = 1/(2(T-t) + 1)
// clamped to alpha = 1 at and beyond the horizon; index-based so the final
// step hits the closed form exactly.
double ddim_coeff(const TimeGrid& grid, int i) {
  if (i >= grid.steps) return 0.0;
  return std::sqrt(2.0 * (grid.horizon - grid.time(i)));
}

}  // namespace

void validate_sampler(SamplerKind kind, const DiffusionSchedule& sched,
                      const TimeGrid& grid) {
  grid.validate();
  if (std::abs(grid.horizon - sched.horizon) > 1e-12)
    throw std::invalid_argument("sampler: grid horizon differs from schedule horizon");
  switch (kind) {
    case SamplerKind::SdeEuler:
      return;
    case SamplerKind::DdpmStyle: {
      if (sched.kind != ScheduleKind::DdpmLinear)
        throw std::invalid_argument("sampler: ddpm kind requires a ddpm_linear schedule");
      const double dt = grid.dt();
      for (int i = 0; i < grid.steps; ++i) {
        const double b = sched.beta(sched.horizon - grid.time(i));
        if (!(1.0 - b * dt > 0.0))
          throw std::invalid_argument("sampler: beta * dt must stay below 1");
      }
      return;
    }
    case SamplerKind::OdeEuler:
    case SamplerKind::Ddim:
      if (!is_score_flow_schedule(sched))
        throw std::invalid_argument(
            "sampler: ode/ddim kinds require constant f = 0, g = sqrt(2)");
      return;
  }
}

Vector sampler_step(SamplerKind kind, const DiffusionSchedule& sched,
                    const TimeGrid& grid, int i, const Vector& y,
                    const Vector& a, RngStream& rng) {
  if (i < 0 || i >= grid.steps)
    throw std::domain_error("sampler: step index out of range");
  if (y.size() != a.size())
    throw std::invalid_argument("sampler: state/action dimension mismatch");
  const double dt = grid.dt();
  const double t_rev = grid.time(i);
  const double t_fwd = grid.horizon - t_rev;
  const int d = static_cast<int>(y.size());

  Vector next;
  switch (kind) {
    case SamplerKind::SdeEuler: {
      const double f = sched.f(t_fwd);
      const double g = sched.g(t_fwd);
      next = y + (f * y + g * g * a) * dt + g * std::sqrt(dt) * rng.normal_vector(d);
      break;
    }
    case SamplerKind::DdpmStyle: {
      const double bdt = sched.beta(t_fwd) * dt;
      next = (y + bdt * a) / std::sqrt(1.0 - bdt) +
             std::sqrt(bdt) * rng.normal_vector(d);
      break;
    }
    case SamplerKind::OdeEuler: {
      next = y + a * dt;
      break;
    }
    case SamplerKind::Ddim: {
      const double c_now = ddim_coeff(grid, i);
      const double c_next = ddim_coeff(grid, i + 1);
      // (c_now - c_next) * c_now, with the final step exactly 2 (T - t_i).
      const double coeff = 2.0 * (grid.horizon - t_rev) - c_next * c_now;
      next = y + coeff * a;
      break;
    }
    default:
      throw std::logic_error("sampler: unknown kind");
  }
  if (!next.allFinite())
    throw EpisodeAbort("sampler: state became non-finite");
  return next;
}

TrajectoryRow rollout(SamplerKind kind, const DiffusionSchedule& sched,
                      const TimeGrid& grid, const GaussianPolicy& pol,
                      const RewardSpec& reward, const SignalConfig& signal,
                      const Dataset& ds, RngStream& rng,
                      const std::optional<Vector>& condition) {
  validate_sampler(kind, sched, grid);
  const PriorSpec prior = make_prior(sched, ds.dim());
  TrajectoryRow row;
  row.condition = condition;
  row.states.resize(ds.dim(), grid.steps + 1);
  row.actions.resize(ds.dim(), grid.steps);
  row.signals.resize(grid.steps);

  Vector y = prior_sample(prior, rng);
  row.states.col(0) = y;
  for (int i = 0; i < grid.steps; ++i) {
    const double t_rev = grid.time(i);
    const Vector a = policy_sample(pol, t_rev, y, rng, condition);
    RngStream sig_rng = rng.derive("signal").derive(i);
    const SignalValue sig =
        running_reward_signal(signal, sched, ds, t_rev, y, a, sig_rng, condition);
    row.actions.col(i) = a;
    row.signals[i] = sig.value;
    row.low_confidence += sig.low_confidence ? 1 : 0;
    y = sampler_step(kind, sched, grid, i, y, a, rng);
    row.states.col(i + 1) = y;
  }
  row.terminal_reward = reward_eval(reward, y);
  return row;
}

Matrix generate(SamplerKind kind, const DiffusionSchedule& sched,
                const TimeGrid& grid, const GaussianPolicy& pol, int n,
                RngStream& rng, const std::optional<Vector>& condition) {
  if (n <= 0) throw std::invalid_argument("generate: n must be positive");
  validate_sampler(kind, sched, grid);
  const int d = pol.state_dim();
  const PriorSpec prior = make_prior(sched, d);
  Matrix out(d, n);
  RngStream gen_root = rng.derive("gen");
  for (int j = 0; j < n; ++j) {
    RngStream traj = gen_root.derive(static_cast<std::uint64_t>(j));
    Vector y = prior_sample(prior, traj);
    for (int i = 0; i < grid.steps; ++i) {
      const Vector a = policy_mean(pol, grid.time(i), y, condition);
      y = sampler_step(kind, sched, grid, i, y, a, traj);
    }
    out.col(j) = y;
  }
  return out;
}

}  // namespace diffrl
