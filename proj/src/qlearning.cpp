#include "diffrl/qlearning.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffrl {

namespace {

constexpr int kDivergenceLimit = 50;  // consecutive dead episodes before abort

double q_log_term(double theta, double g2, int dim) {
  return 0.5 * theta * dim * std::log(std::numbers::pi * theta / g2);
}

double lr_multiplier(LrDecay decay, double scale, int episode) {
  switch (decay) {
    case LrDecay::Constant:
      return 1.0;
    case LrDecay::InvSqrt:
      return 1.0 / std::sqrt(1.0 + episode / scale);
  }
  return 1.0;
}

int condition_match_count(const Dataset& ds, const Vector& c) {
  if (!ds.conditions) return 0;
  int n = 0;
  for (int j = 0; j < ds.size(); ++j)
    if (ds.conditions->col(j) == c) ++n;
  return n;
}

Vector draw_condition(const DiscreteConditionDist& dist, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < dist.probs.size(); ++i) {
    acc += dist.probs[i];
    if (u < acc) return dist.values[i];
  }
  return dist.values.back();
}

}  // namespace

void TrainConfig::validate(int data_dim) const {
  grid.validate();
  if (episodes < 0) throw std::invalid_argument("train: episodes must be >= 0");
  if (batch <= 0) throw std::invalid_argument("train: batch must be positive");
  if (!(theta > 0.0)) throw std::invalid_argument("train: theta must be > 0");
  if (!(lr_actor > 0.0) || !(lr_critic > 0.0))
    throw std::invalid_argument("train: learning rates must be > 0");
  if (signal.m <= 0)
    throw std::invalid_argument("train: signal subsample size must be positive");
  if (boundary_penalty < 0.0)
    throw std::invalid_argument("train: boundary penalty must be >= 0");
  if (hidden.empty())
    throw std::invalid_argument("train: need at least one hidden layer");
  if (condition_dist) {
    if (condition_dist->values.empty() ||
        static_cast<int>(condition_dist->values.size()) !=
            condition_dist->probs.size())
      throw std::invalid_argument("train: condition values/probs mismatch");
    if (std::abs(condition_dist->probs.sum() - 1.0) > 1e-9)
      throw std::invalid_argument("train: condition probs must sum to 1");
  }
  (void)data_dim;
}

double td_residual(const ValueFunction& vf, const GaussianPolicy& pol,
                   const TrajectoryRow& row, const TimeGrid& grid, int i,
                   const TdContext& ctx) {
  if (i < 0 || i >= grid.steps)
    throw std::domain_error("td_residual: step index out of range");
  const double dt = grid.dt();
  const double t = grid.time(i);
  const auto& c = row.condition;

  double j_next;
  if (i + 1 < grid.steps) {
    j_next = mlp_forward(vf.spec, vf.params,
                         net_input(grid.horizon - grid.time(i + 1),
                                   row.states.col(i + 1), c))(0);
  } else if (ctx.terminal_value == TerminalValue::Anchor) {
    j_next = ctx.beta * row.terminal_reward;
  } else {
    j_next = mlp_forward(vf.spec, vf.params,
                         net_input(0.0, row.states.col(grid.steps), c))(0);
  }
  const double j_here = mlp_forward(
      vf.spec, vf.params, net_input(grid.horizon - t, row.states.col(i), c))(0);
  const double q =
      q_value(pol, t, row.states.col(i), row.actions.col(i), c);
  return j_next - j_here + row.signals[i] * dt - q * dt;
}

EpisodeGradients episode_gradients(const ValueFunction& vf,
                                   const GaussianPolicy& pol,
                                   const TrajectoryRow& row,
                                   const TimeGrid& grid, const TdContext& ctx) {
  EpisodeGradients eg;
  eg.critic_dir = Vector::Zero(vf.params.size());
  eg.actor_dir = Vector::Zero(pol.psi.size());
  for (int i = 0; i < grid.steps; ++i) {
    const double g = td_residual(vf, pol, row, grid, i, ctx);
    eg.loss += g * g;
    eg.critic_dir += g * value_and_grad(vf, grid.horizon - grid.time(i),
                                        row.states.col(i), row.condition)
                             .grad;
    eg.actor_dir += g * q_grad_psi(pol, grid.time(i), row.states.col(i),
                                   row.actions.col(i), row.condition);
  }
  if (ctx.terminal_value == TerminalValue::Learned) {
    const auto vg =
        value_and_grad(vf, 0.0, row.states.col(grid.steps), row.condition);
    const double resid = vg.value - ctx.beta * row.terminal_reward;
    eg.loss += ctx.boundary_penalty * resid * resid;
    eg.critic_dir -= ctx.boundary_penalty * resid * vg.grad;
  }
  return eg;
}

TrajectoryBatch rollout_batch(SamplerKind kind, const DiffusionSchedule& sched,
                              const TimeGrid& grid, const GaussianPolicy& pol,
                              const RewardSpec& reward,
                              const SignalConfig& signal, const Dataset& ds,
                              const RngStream& episode_stream, int batch,
                              int* aborts,
                              const std::optional<Vector>& condition) {
  validate_sampler(kind, sched, grid);
  if (batch <= 0) throw std::invalid_argument("rollout: batch must be positive");
  if (condition && condition_match_count(ds, *condition) == 0)
    throw std::runtime_error("rollout: no dataset rows match the condition");

  const int d = ds.dim();
  const int steps = grid.steps;
  const double dt = grid.dt();
  const PriorSpec prior = make_prior(sched, d);
  const bool stochastic = sampler_is_stochastic(kind);

  std::vector<RngStream> streams;
  streams.reserve(batch);
  for (int b = 0; b < batch; ++b)
    streams.push_back(episode_stream.derive(static_cast<std::uint64_t>(b)));

  std::vector<Matrix> states(steps + 1, Matrix::Zero(d, batch));
  std::vector<Matrix> actions(steps, Matrix::Zero(d, batch));
  Matrix signals = Matrix::Zero(steps, batch);
  std::vector<int> low_conf(batch, 0);
  std::vector<char> alive(batch, 1);

  const int in_dim = 1 + d + (condition ? static_cast<int>(condition->size()) : 0);
  Matrix in(in_dim, batch);
  if (condition)
    in.bottomRows(condition->size()).colwise() = *condition;

  for (int b = 0; b < batch; ++b)
    states[0].col(b) = prior_sample(prior, streams[b]);

  Matrix y = states[0];
  for (int i = 0; i < steps; ++i) {
    const double t_rev = grid.time(i);
    const double t_fwd = grid.horizon - t_rev;
    const double sd = policy_stddev(pol, t_rev);

    in.row(0).setConstant(t_fwd);
    in.middleRows(1, d) = y;
    const Matrix mu = mlp_forward(pol.mean_spec, pol.psi, in);
    for (int b = 0; b < batch; ++b)
      if (alive[b] && !mu.col(b).allFinite()) alive[b] = 0;

    Matrix a = Matrix::Zero(d, batch);
    for (int b = 0; b < batch; ++b)
      if (alive[b]) a.col(b) = mu.col(b) + sd * streams[b].normal_vector(d);
    for (int b = 0; b < batch; ++b) {
      if (!alive[b]) continue;
      RngStream sig_rng = streams[b].derive("signal").derive(i);
      const SignalValue sig = running_reward_signal(signal, sched, ds, t_rev,
                                                    y.col(b), a.col(b), sig_rng,
                                                    condition);
      signals(i, b) = sig.value;
      low_conf[b] += sig.low_confidence ? 1 : 0;
    }
    Matrix noise = Matrix::Zero(d, batch);
    if (stochastic)
      for (int b = 0; b < batch; ++b)
        if (alive[b]) noise.col(b) = streams[b].normal_vector(d);

    switch (kind) {
      case SamplerKind::SdeEuler: {
        const double f = sched.f(t_fwd), g = sched.g(t_fwd);
        y = (1.0 + f * dt) * y + (g * g * dt) * a + (g * std::sqrt(dt)) * noise;
        break;
      }
      case SamplerKind::DdpmStyle: {
        const double bdt = sched.beta(t_fwd) * dt;
        y = (y + bdt * a) / std::sqrt(1.0 - bdt) + std::sqrt(bdt) * noise;
        break;
      }
      case SamplerKind::OdeEuler:
        y += dt * a;
        break;
      case SamplerKind::Ddim: {
        const double c_now = std::sqrt(2.0 * (grid.horizon - t_rev));
        const double c_next =
            i + 1 >= steps ? 0.0 : std::sqrt(2.0 * (grid.horizon - grid.time(i + 1)));
        y += (2.0 * (grid.horizon - t_rev) - c_next * c_now) * a;
        break;
      }
    }
    for (int b = 0; b < batch; ++b) {
      if (alive[b] && !y.col(b).allFinite()) {
        alive[b] = 0;
        y.col(b).setZero();
      }
      if (!alive[b]) y.col(b).setZero();
    }
    actions[i] = a;
    states[i + 1] = y;
  }

  TrajectoryBatch out;
  out.grid = grid;
  for (int b = 0; b < batch; ++b) {
    if (!alive[b]) continue;
    double h;
    try {
      h = reward_eval(reward, states[steps].col(b));
    } catch (const std::runtime_error&) {
      alive[b] = 0;
      continue;
    }
    TrajectoryRow row;
    row.states.resize(d, steps + 1);
    row.actions.resize(d, steps);
    row.signals.resize(steps);
    for (int i = 0; i <= steps; ++i) row.states.col(i) = states[i].col(b);
    for (int i = 0; i < steps; ++i) {
      row.actions.col(i) = actions[i].col(b);
      row.signals[i] = signals(i, b);
    }
    row.terminal_reward = h;
    row.low_confidence = low_conf[b];
    row.condition = condition;
    out.rows.push_back(std::move(row));
  }
  if (aborts) *aborts = batch - static_cast<int>(out.rows.size());
  return out;
}

namespace {

struct BatchDirections {
  Vector critic_dir;
  Vector actor_dir;
  double loss = 0.0;
};

// Batched version of episode_gradients averaged over rows: one forward and
// one backward per network over all (step, trajectory) pairs.
BatchDirections batch_directions(const ValueFunction& vf,
                                 const GaussianPolicy& pol,
                                 const TrajectoryBatch& batch,
                                 const TdContext& ctx) {
  const auto& grid = batch.grid;
  const int n = static_cast<int>(batch.rows.size());
  const int steps = grid.steps;
  const double dt = grid.dt();
  const int d = static_cast<int>(batch.rows[0].states.rows());
  const auto& cond = batch.rows[0].condition;
  const int dc = cond ? static_cast<int>(cond->size()) : 0;
  const int cols = n * steps;

  Matrix in(1 + d + dc, cols);
  for (int i = 0; i < steps; ++i)
    for (int b = 0; b < n; ++b) {
      const int c = i * n + b;
      in(0, c) = grid.horizon - grid.time(i);
      in.block(1, c, d, 1) = batch.rows[b].states.col(i);
      if (cond) in.block(1 + d, c, dc, 1) = batch.rows[b].condition.value();
    }

  ForwardTape critic_tape, actor_tape;
  const Matrix j_all = mlp_forward(vf.spec, vf.params, in, &critic_tape);
  const Matrix mu_all = mlp_forward(pol.mean_spec, pol.psi, in, &actor_tape);

  // Terminal values for the Learned mode.
  Matrix in_term;
  ForwardTape term_tape;
  Matrix j_term;
  if (ctx.terminal_value == TerminalValue::Learned) {
    in_term.resize(1 + d + dc, n);
    for (int b = 0; b < n; ++b) {
      in_term(0, b) = 0.0;
      in_term.block(1, b, d, 1) = batch.rows[b].states.col(steps);
      if (cond) in_term.block(1 + d, b, dc, 1) = batch.rows[b].condition.value();
    }
    j_term = mlp_forward(vf.spec, vf.params, in_term, &term_tape);
  }

  Matrix g_mat(steps, n);
  Matrix critic_cot(1, cols);
  Matrix actor_cot(d, cols);
  double loss = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double g = pol.sched.g(grid.horizon - grid.time(i));
    const double g2 = g * g;
    const double log_term = q_log_term(pol.theta, g2, d);
    for (int b = 0; b < n; ++b) {
      const int c = i * n + b;
      const Vector diff = batch.rows[b].actions.col(i) - mu_all.col(c);
      const double q = -g2 * diff.squaredNorm() - log_term;
      double j_next;
      if (i + 1 < steps) {
        j_next = j_all(0, (i + 1) * n + b);
      } else if (ctx.terminal_value == TerminalValue::Anchor) {
        j_next = ctx.beta * batch.rows[b].terminal_reward;
      } else {
        j_next = j_term(0, b);
      }
      const double resid =
          j_next - j_all(0, c) + batch.rows[b].signals[i] * dt - q * dt;
      g_mat(i, b) = resid;
      loss += resid * resid;
      critic_cot(0, c) = resid / n;
      actor_cot.col(c) = (2.0 * g2 / n) * resid * diff;
    }
  }

  BatchDirections out;
  out.critic_dir =
      mlp_backward(vf.spec, vf.params, critic_tape, critic_cot).param_grad;
  out.actor_dir =
      mlp_backward(pol.mean_spec, pol.psi, actor_tape, actor_cot).param_grad;

  if (ctx.terminal_value == TerminalValue::Learned) {
    Matrix term_cot(1, n);
    for (int b = 0; b < n; ++b) {
      const double resid = j_term(0, b) - ctx.beta * batch.rows[b].terminal_reward;
      loss += ctx.boundary_penalty * resid * resid;
      term_cot(0, b) = -ctx.boundary_penalty * resid / n;
    }
    out.critic_dir +=
        mlp_backward(vf.spec, vf.params, term_tape, term_cot).param_grad;
  }
  out.loss = loss / n;
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DiffusionSchedule& sched,
                  const Dataset& ds, const RngStream& root,
                  const EpisodeCallback& callback) {
  cfg.validate(ds.dim());
  if (std::abs(cfg.grid.horizon - sched.horizon) > 1e-12)
    throw std::invalid_argument("train: grid horizon differs from schedule horizon");
  if (cfg.signal.m > ds.size())
    throw std::invalid_argument("train: signal subsample exceeds dataset size");
  if (cfg.condition_dist && !ds.conditions)
    throw std::invalid_argument("train: conditional training needs a conditioned dataset");

  const int d = ds.dim();
  const int dc = cfg.condition_dist
                     ? static_cast<int>(cfg.condition_dist->values[0].size())
                     : 0;
  const int in_dim = 1 + d + dc;

  TrainResult res;
  res.policy.mean_spec = MlpSpec::standard(in_dim, d, cfg.hidden);
  res.policy.theta = cfg.theta;
  res.policy.sched = sched;
  res.critic.spec = MlpSpec::standard(in_dim, 1, cfg.hidden);

  RngStream init = root.derive("init");
  if (cfg.init_actor) {
    if (cfg.init_actor->size() != res.policy.mean_spec.param_count())
      throw std::invalid_argument("train: warm-start actor parameter size mismatch");
    res.policy.psi = *cfg.init_actor;
  } else {
    RngStream s = init.derive("actor");
    res.policy.psi = init_params(res.policy.mean_spec, s);
  }
  if (cfg.init_critic) {
    if (cfg.init_critic->size() != res.critic.spec.param_count())
      throw std::invalid_argument("train: warm-start critic parameter size mismatch");
    res.critic.params = *cfg.init_critic;
  } else {
    RngStream s = init.derive("critic");
    res.critic.params = init_params(res.critic.spec, s);
  }

  AdamState adam_actor = AdamState::create(res.policy.psi.size(), cfg.lr_actor);
  AdamState adam_critic = AdamState::create(res.critic.params.size(), cfg.lr_critic);
  const TdContext ctx{cfg.reward.beta, cfg.terminal_value, cfg.boundary_penalty};

  RngStream train_root = root.derive("train");
  res.stats.reserve(cfg.episodes);
  int dead_streak = 0;

  for (int e = 0; e < cfg.episodes; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream ep = train_root.derive(static_cast<std::uint64_t>(e));
    EpisodeStats st;
    st.episode = e;

    std::optional<Vector> condition;
    bool zero_match = false;
    if (cfg.condition_dist) {
      RngStream cond_rng = ep.derive("cond");
      condition = draw_condition(*cfg.condition_dist, cond_rng);
      zero_match = condition_match_count(ds, *condition) == 0;
      if (zero_match) st.aborts = cfg.batch;
    }

    // A condition with no matching rows yields an empty batch and counts
    // toward the dead-episode divergence guard like any other failed update.
    TrajectoryBatch batch;
    if (!zero_match)
      batch = rollout_batch(cfg.kind, sched, cfg.grid, res.policy, cfg.reward,
                            cfg.signal, ds, ep, cfg.batch, &st.aborts, condition);

    bool updated = false;
    if (!batch.rows.empty()) {
      for (const auto& row : batch.rows) {
        st.mean_terminal_reward += row.terminal_reward;
        st.mean_signal += row.signals.mean();
        st.low_confidence += row.low_confidence;
      }
      const int n = static_cast<int>(batch.rows.size());
      st.mean_terminal_reward /= n;
      st.mean_signal /= n;

      const BatchDirections dirs =
          batch_directions(res.critic, res.policy, batch, ctx);
      st.loss = dirs.loss;
      st.grad_norm_critic = dirs.critic_dir.norm();
      st.grad_norm_actor = dirs.actor_dir.norm();

      if (std::isfinite(dirs.loss) && dirs.critic_dir.allFinite() &&
          dirs.actor_dir.allFinite()) {
        if (cfg.update_rule == UpdateRule::Adam) {
          // Minimize the squared-residual loss; its gradients are -2 times
          // the update directions (the actor one carries the extra dt).
          adam_step(adam_critic, res.critic.params, -2.0 * dirs.critic_dir, -1);
          adam_step(adam_actor, res.policy.psi,
                    (-2.0 * cfg.grid.dt()) * dirs.actor_dir, -1);
        } else {
          const double l = lr_multiplier(cfg.lr_decay, cfg.lr_decay_scale, e);
          res.critic.params += l * cfg.lr_critic * dirs.critic_dir;
          res.policy.psi += l * cfg.lr_actor * dirs.actor_dir;
        }
        updated = res.critic.params.allFinite() && res.policy.psi.allFinite();
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
    if (callback) callback(st, res.policy, res.critic);

    if (!res.critic.params.allFinite() || !res.policy.psi.allFinite()) {
      res.diverged = true;
      res.diverged_reason = "parameters became non-finite at episode " +
                            std::to_string(e);
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

TrainResult train_conditional(const TrainConfig& cfg,
                              const DiffusionSchedule& sched, const Dataset& ds,
                              const RngStream& root,
                              const EpisodeCallback& callback) {
  if (!cfg.condition_dist)
    throw std::invalid_argument("train_conditional: condition distribution required");
  return train(cfg, sched, ds, root, callback);
}

}  // namespace diffrl
