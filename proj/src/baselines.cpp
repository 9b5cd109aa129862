#include "diffrl/baselines.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace diffrl {

namespace {

constexpr int kDivergenceLimit = 50;

// Gaussian transition y' ~ N(c_state * y + c_action * mu, sigma2 * I).
struct TransitionCoeffs {
  double c_state = 0.0;
  double c_action = 0.0;
  double sigma2 = 0.0;
};

TransitionCoeffs transition_coeffs(SamplerKind kind,
                                   const DiffusionSchedule& sched,
                                   const TimeGrid& grid, int i) {
  const double dt = grid.dt();
  const double t_fwd = grid.horizon - grid.time(i);
  switch (kind) {
    case SamplerKind::SdeEuler: {
      const double f = sched.f(t_fwd), g = sched.g(t_fwd);
      return {1.0 + f * dt, g * g * dt, g * g * dt};
    }
    case SamplerKind::DdpmStyle: {
      const double bdt = sched.beta(t_fwd) * dt;
      const double inv = 1.0 / std::sqrt(1.0 - bdt);
      return {inv, bdt * inv, bdt};
    }
    default:
      throw std::invalid_argument(
          "baseline: only stochastic sampler kinds define transition densities");
  }
}

}  // namespace

void BaselineConfig::validate() const {
  grid.validate();
  if (!sampler_is_stochastic(kind))
    throw std::invalid_argument("baseline: sampler kind must be stochastic");
  if (episodes < 0) throw std::invalid_argument("baseline: episodes must be >= 0");
  if (batch <= 0) throw std::invalid_argument("baseline: batch must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("baseline: lr must be > 0");
  if (algo == BaselineAlgo::Ddpo && gamma != 0.0)
    throw std::invalid_argument("baseline: reward-only algo requires gamma = 0");
  if (gamma < 0.0) throw std::invalid_argument("baseline: gamma must be >= 0");
}

double onestep_kl(const Vector& mean_a, const Vector& mean_b, double sigma2) {
  if (!(sigma2 > 0.0))
    throw std::invalid_argument("onestep_kl: sigma2 must be positive");
  if (mean_a.size() != mean_b.size())
    throw std::invalid_argument("onestep_kl: dimension mismatch");
  return (mean_a - mean_b).squaredNorm() / (2.0 * sigma2);
}

BaselineResult baseline_train(const BaselineConfig& cfg,
                              const DiffusionSchedule& sched,
                              const GaussianPolicy& pretrained,
                              const RngStream& root,
                              const EpisodeCallback& callback) {
  cfg.validate();
  validate_sampler(cfg.kind, sched, cfg.grid);

  const int d = pretrained.state_dim();
  const int steps = cfg.grid.steps;
  const PriorSpec prior = make_prior(sched, d);

  BaselineResult res;
  // Fine-tuning starts at the pretrained parameters.  The pretrained net may
  // come from a run at a different horizon: nets are keyed on the noising
  // time, so the parameters transfer, but the result runs this schedule.
  res.policy = pretrained;
  res.policy.sched = sched;

  AdamState adam = AdamState::create(res.policy.psi.size(), cfg.lr);
  RngStream train_root = root.derive("train");
  res.stats.reserve(cfg.episodes);
  int dead_streak = 0;

  // Unused critic slot for the shared callback signature.
  ValueFunction dummy_critic;
  dummy_critic.spec = MlpSpec::standard(1 + d, 1, {1});
  dummy_critic.params = Vector::Zero(dummy_critic.spec.param_count());

  std::vector<TransitionCoeffs> coeffs(steps);
  for (int i = 0; i < steps; ++i)
    coeffs[i] = transition_coeffs(cfg.kind, sched, cfg.grid, i);

  for (int e = 0; e < cfg.episodes; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream ep = train_root.derive(static_cast<std::uint64_t>(e));
    EpisodeStats st;
    st.episode = e;

    // Lockstep rollouts under the current transition means.
    std::vector<RngStream> streams;
    streams.reserve(cfg.batch);
    for (int b = 0; b < cfg.batch; ++b)
      streams.push_back(ep.derive(static_cast<std::uint64_t>(b)));
    std::vector<char> alive(cfg.batch, 1);
    std::vector<Matrix> states(steps + 1, Matrix::Zero(d, cfg.batch));
    for (int b = 0; b < cfg.batch; ++b)
      states[0].col(b) = prior_sample(prior, streams[b]);

    Matrix in(1 + d, cfg.batch);
    Matrix y = states[0];
    for (int i = 0; i < steps; ++i) {
      in.row(0).setConstant(cfg.grid.horizon - cfg.grid.time(i));
      in.middleRows(1, d) = y;
      const Matrix mu = mlp_forward(res.policy.mean_spec, res.policy.psi, in);
      const auto& tc = coeffs[i];
      for (int b = 0; b < cfg.batch; ++b) {
        if (!alive[b]) continue;
        if (!mu.col(b).allFinite()) {
          alive[b] = 0;
          y.col(b).setZero();
          continue;
        }
        y.col(b) = tc.c_state * y.col(b) + tc.c_action * mu.col(b) +
                   std::sqrt(tc.sigma2) * streams[b].normal_vector(d);
        if (!y.col(b).allFinite()) {
          alive[b] = 0;
          y.col(b).setZero();
        }
      }
      states[i + 1] = y;
    }

    std::vector<int> alive_idx;
    for (int b = 0; b < cfg.batch; ++b)
      if (alive[b]) alive_idx.push_back(b);
    const int n = static_cast<int>(alive_idx.size());
    st.aborts = cfg.batch - n;

    bool updated = false;
    if (n > 0) {
      Vector h(n);
      bool reward_ok = true;
      for (int k = 0; k < n; ++k) {
        try {
          h[k] = reward_eval(cfg.reward, states[steps].col(alive_idx[k]));
        } catch (const std::runtime_error&) {
          reward_ok = false;
          break;
        }
      }
      if (reward_ok) {
        const double h_sum = h.sum();
        st.mean_terminal_reward = h_sum / n;

        // One batched pass over all (step, trajectory) pairs.
        const int cols = steps * n;
        Matrix in_all(1 + d, cols);
        for (int i = 0; i < steps; ++i)
          for (int k = 0; k < n; ++k) {
            const int c = i * n + k;
            in_all(0, c) = cfg.grid.horizon - cfg.grid.time(i);
            in_all.block(1, c, d, 1) = states[i].col(alive_idx[k]);
          }
        ForwardTape tape;
        const Matrix mu = mlp_forward(res.policy.mean_spec, res.policy.psi,
                                      in_all, &tape);
        const Matrix mu_pre =
            mlp_forward(pretrained.mean_spec, pretrained.psi, in_all);

        Matrix cot(d, cols);
        double kl_sum = 0.0;
        for (int i = 0; i < steps; ++i) {
          const auto& tc = coeffs[i];
          for (int k = 0; k < n; ++k) {
            const int c = i * n + k;
            const int b = alive_idx[k];
            // Leave-one-out mean reward baseline keeps the estimator unbiased.
            const double adv =
                n > 1 ? h[k] - (h_sum - h[k]) / (n - 1) : h[k];
            const Vector mean_phi =
                tc.c_state * states[i].col(b) + tc.c_action * mu.col(c);
            const Vector score_cot =
                (tc.c_action / tc.sigma2) * (states[i + 1].col(b) - mean_phi);
            const Vector kl_cot = (tc.c_action * tc.c_action / tc.sigma2) *
                                  (mu.col(c) - mu_pre.col(c));
            cot.col(c) = (-cfg.reward.beta * adv * score_cot + cfg.gamma * kl_cot) /
                         n;
            kl_sum += tc.c_action * tc.c_action *
                      (mu.col(c) - mu_pre.col(c)).squaredNorm() /
                      (2.0 * tc.sigma2) / n;
          }
        }
        st.mean_signal = kl_sum;  // mean per-trajectory KL to the anchor
        st.loss = -cfg.reward.beta * st.mean_terminal_reward + cfg.gamma * kl_sum;

        const Vector grad =
            mlp_backward(res.policy.mean_spec, res.policy.psi, tape, cot)
                .param_grad;
        st.grad_norm_actor = grad.norm();
        if (grad.allFinite() && std::isfinite(st.loss)) {
          adam_step(adam, res.policy.psi, grad, -1);
          updated = res.policy.psi.allFinite();
        }
      }
    }

    if (updated) {
      dead_streak = 0;
    } else {
      st.skipped = 1;
      ++dead_streak;
    }
    st.wall_ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
    res.stats.push_back(st);
    if (callback) callback(st, res.policy, dummy_critic);

    if (!res.policy.psi.allFinite()) {
      res.diverged = true;
      res.diverged_reason =
          "parameters became non-finite at episode " + std::to_string(e);
      break;
    }
    if (dead_streak >= kDivergenceLimit) {
      res.diverged = true;
      res.diverged_reason = "no usable update for " +
                            std::to_string(kDivergenceLimit) +
                            " consecutive episodes ending at " + std::to_string(e);
      break;
    }
  }
  return res;
}

}  // namespace diffrl
