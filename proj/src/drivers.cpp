#include "diffrl/drivers.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace diffrl {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json spec_to_json(const MlpSpec& s) {
  json acts = json::array();
  for (auto a : s.activations) acts.push_back(activation_name(a));
  return json{{"layer_dims", s.layer_dims}, {"activations", acts}};
}

MlpSpec spec_from_json(const json& j) {
  MlpSpec s;
  s.layer_dims = j.at("layer_dims").get<std::vector<int>>();
  for (const auto& a : j.at("activations"))
    s.activations.push_back(activation_from_name(a.get<std::string>()));
  s.validate();
  return s;
}

void write_json_file(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

std::string artifact_meta(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "config_hash=" << cfg.hash_hex << " seed=" << cfg.seed
     << " version=" << kVersion;
  return os.str();
}

// Condition vector a model expects at inference, from an eval/generate
// section, checked against the mean network's input layout.
std::optional<Vector> checked_condition(const GaussianPolicy& pol,
                                        const std::optional<Vector>& cond,
                                        const std::string& what) {
  const int dc = pol.mean_spec.input_dim() - 1 - pol.state_dim();
  if (dc > 0) {
    if (!cond)
      throw ConfigError(what + ": model is conditional; set a condition vector");
    if (cond->size() != dc)
      throw ConfigError(what + ": condition has size " +
                        std::to_string(cond->size()) + ", model expects " +
                        std::to_string(dc));
    return cond;
  }
  if (cond)
    throw ConfigError(what + ": model is unconditional; remove the condition");
  return std::nullopt;
}

// Reference sample set for scoring: the dataset itself or, for conditional
// models, the columns whose condition matches exactly.
Matrix eval_reference(const Dataset& ds, const std::optional<Vector>& cond) {
  if (!cond || !ds.conditions) return ds.points;
  std::vector<int> keep;
  for (int j = 0; j < ds.size(); ++j)
    if (ds.conditions->col(j) == *cond) keep.push_back(j);
  if (keep.empty())
    throw ConfigError("eval: no dataset rows match the requested condition");
  Matrix ref(ds.dim(), static_cast<int>(keep.size()));
  for (size_t i = 0; i < keep.size(); ++i) ref.col(static_cast<int>(i)) = ds.points.col(keep[i]);
  return ref;
}

std::string describe(const MetricReport& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g +/- %.2g", r.mean, r.ci95_halfwidth);
  return buf;
}

}  // namespace

json stats_to_json(const EpisodeStats& s) {
  return json{{"aborts", s.aborts},
              {"episode", s.episode},
              {"grad_norm_actor", s.grad_norm_actor},
              {"grad_norm_critic", s.grad_norm_critic},
              {"loss", s.loss},
              {"low_confidence", s.low_confidence},
              {"mean_signal", s.mean_signal},
              {"mean_terminal_reward", s.mean_terminal_reward},
              {"skipped", s.skipped}};
}

json report_to_json(const MetricReport& r) {
  return json{{"mean", r.mean},
              {"stderr", r.stderr_mean},
              {"ci95_halfwidth", r.ci95_halfwidth},
              {"batches", r.batches}};
}

Checkpoint model_checkpoint(const GaussianPolicy& policy,
                            const ValueFunction* critic, json extra_meta) {
  Checkpoint ckpt;
  ckpt.meta = std::move(extra_meta);
  ckpt.meta["format"] = "diffrl-model";
  ckpt.meta["version"] = kVersion;
  ckpt.meta["schedule"] = schedule_to_json(policy.sched);
  ckpt.meta["theta"] = policy.theta;
  ckpt.meta["actor"] = spec_to_json(policy.mean_spec);
  ckpt.meta["dim"] = policy.state_dim();
  ckpt.meta["cond_dim"] =
      policy.mean_spec.input_dim() - 1 - policy.state_dim();
  ckpt.add_tensor("actor.params", policy.psi);
  if (critic) {
    ckpt.meta["critic"] = spec_to_json(critic->spec);
    ckpt.add_tensor("critic.params", critic->params);
  }
  return ckpt;
}

void save_model(const std::string& path, const GaussianPolicy& policy,
                const ValueFunction* critic, json extra_meta) {
  checkpoint_save(path, model_checkpoint(policy, critic, std::move(extra_meta)));
}

LoadedModel load_model(const std::string& path) {
  Checkpoint ckpt = checkpoint_load(path);
  try {
    if (ckpt.meta.value("format", "") != "diffrl-model")
      throw std::runtime_error("not a model checkpoint");
    MlpSpec actor_spec = spec_from_json(ckpt.meta.at("actor"));
    const Vector& psi = ckpt.tensor("actor.params");
    if (psi.size() != actor_spec.param_count())
      throw std::runtime_error("actor parameter count mismatch");
    GaussianPolicy pol{std::move(actor_spec), psi,
                       ckpt.meta.at("theta").get<double>(),
                       schedule_from_json(ckpt.meta.at("schedule"))};
    std::optional<ValueFunction> critic;
    if (ckpt.meta.contains("critic")) {
      MlpSpec cs = spec_from_json(ckpt.meta.at("critic"));
      const Vector& params = ckpt.tensor("critic.params");
      if (params.size() != cs.param_count())
        throw std::runtime_error("critic parameter count mismatch");
      critic = ValueFunction{std::move(cs), params};
    }
    return LoadedModel{std::move(pol), std::move(critic), std::move(ckpt.meta)};
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("model checkpoint '") + path +
                             "': bad metadata: " + e.what());
  }
}

fs::path make_run_dir(const ExperimentConfig& cfg, const std::string& command) {
  const std::string stem =
      command + "-" + cfg.hash_hex.substr(0, 8) + "-s" + std::to_string(cfg.seed);
  const fs::path base(cfg.out_dir);
  fs::path dir = base / stem;
  for (int i = 1; fs::exists(dir); ++i) {
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "-%03d", i);
    dir = base / (stem + suffix);
  }
  fs::create_directories(dir);
  write_json_file(dir / "run.json", json{{"command", command},
                                         {"config", cfg.raw},
                                         {"config_hash", cfg.hash_hex},
                                         {"seed", cfg.seed},
                                         {"version", kVersion}});
  return dir;
}

std::optional<LoadedModel> load_train_init(const ExperimentConfig& cfg) {
  std::string path;
  if (cfg.train.algo == TrainAlgo::QLearning) {
    if (!cfg.train.init_checkpoint) return std::nullopt;
    path = *cfg.train.init_checkpoint;
  } else {
    path = cfg.train.pretrained;
  }
  // No schedule check here: a warm start only seeds the parameters, and nets
  // are keyed on the noising time, so a model trained at one horizon can
  // initialize a run at another (eval/generate stay strict).
  return load_model(path);
}

FitOutcome fit_once(const ExperimentConfig& cfg, double beta, int episodes,
                    const Dataset& ds, const std::optional<LoadedModel>& warm,
                    const RngStream& root, const EpisodeCallback& callback) {
  if (cfg.train.algo == TrainAlgo::QLearning) {
    TrainConfig tc = cfg.train_config();
    tc.reward.beta = beta;
    tc.episodes = episodes;
    if (warm) {
      int dc = 0;
      if (tc.condition_dist && !tc.condition_dist->values.empty())
        dc = static_cast<int>(tc.condition_dist->values[0].size());
      const MlpSpec expect =
          MlpSpec::standard(1 + ds.dim() + dc, ds.dim(), tc.hidden);
      if (warm->policy.mean_spec.layer_dims != expect.layer_dims)
        throw ConfigError(
            "init checkpoint: mean network layers do not match this config");
      tc.init_actor = warm->policy.psi;
      if (warm->critic) {
        const MlpSpec cexpect =
            MlpSpec::standard(1 + ds.dim() + dc, 1, tc.hidden);
        if (warm->critic->spec.layer_dims == cexpect.layer_dims)
          tc.init_critic = warm->critic->params;
      }
    }
    TrainResult r = train(tc, cfg.schedule, ds, root, callback);
    return FitOutcome{std::move(r.policy), std::move(r.critic),
                      std::move(r.stats), r.diverged, r.diverged_reason};
  }
  BaselineConfig bc = cfg.baseline_config();
  bc.reward.beta = beta;
  bc.episodes = episodes;
  if (!warm) throw ConfigError("$.train.pretrained: required for ddpo/dpok");
  BaselineResult r = baseline_train(bc, cfg.schedule, warm->policy, root, callback);
  return FitOutcome{std::move(r.policy), std::nullopt, std::move(r.stats),
                    r.diverged, r.diverged_reason};
}

BatchProtocolResult eval_policy(const GaussianPolicy& policy, SamplerKind kind,
                                const TimeGrid& grid, const Matrix& reference,
                                const RewardSpec& reward, int n_batches,
                                int batch_size, int k,
                                const std::optional<Vector>& condition,
                                const RngStream& rng) {
  validate_sampler(kind, policy.sched, grid);
  const auto cond = checked_condition(policy, condition, "eval");
  if (reference.rows() != policy.state_dim())
    throw ConfigError("eval: reference dimension " +
                      std::to_string(reference.rows()) + " != model dimension " +
                      std::to_string(policy.state_dim()));
  SampleGenerator gen = [&](int count, RngStream& r) {
    return generate(kind, policy.sched, grid, policy, count, r, cond);
  };
  return batch_protocol(gen, reference, reward, n_batches, batch_size, k, rng);
}

RunOutcome run_train(const ExperimentConfig& cfg, bool quiet) {
  const auto warm = load_train_init(cfg);
  const fs::path dir = make_run_dir(cfg, "train");
  RngStream root(cfg.seed);
  RngStream data_rng = root.derive("data");
  Dataset ds = cfg.dataset.realize(data_rng);
  save_dataset_csv((dir / "dataset.csv").string(), ds, artifact_meta(cfg));

  std::ofstream stats_out(dir / "stats.jsonl");
  if (!stats_out)
    throw std::runtime_error("cannot write " + (dir / "stats.jsonl").string());
  const bool has_critic = cfg.train.algo == TrainAlgo::QLearning;
  const int every = cfg.train.checkpoint_every;
  const int print_every = std::max(1, cfg.train.episodes / 20);
  json extra{{"config_hash", cfg.hash_hex}, {"seed", cfg.seed}};
  EpisodeCallback cb = [&](const EpisodeStats& s, const GaussianPolicy& p,
                           const ValueFunction& v) {
    stats_out << stats_to_json(s).dump() << "\n";
    if (every > 0 && (s.episode + 1) % every == 0) {
      char name[40];
      std::snprintf(name, sizeof name, "checkpoint-ep%06d.ckpt", s.episode + 1);
      save_model((dir / name).string(), p, has_critic ? &v : nullptr, extra);
    }
    if (!quiet && ((s.episode + 1) % print_every == 0 || s.episode == 0))
      std::cout << "episode " << (s.episode + 1) << "/" << cfg.train.episodes
                << "  loss " << s.loss << "  reward " << s.mean_terminal_reward
                << "\n"
                << std::flush;
  };
  FitOutcome out =
      fit_once(cfg, cfg.reward.beta, cfg.train.episodes, ds, warm, root, cb);
  stats_out.close();
  save_model((dir / "checkpoint.ckpt").string(), out.policy,
             out.critic ? &*out.critic : nullptr, extra);

  RunOutcome ro{dir, false, ""};
  if (out.diverged) {
    ro.failed = true;
    ro.message = "training aborted: " + out.reason +
                 " (diagnostic checkpoint in " + dir.string() + ")";
    return ro;
  }
  const BatchProtocolResult ev = eval_policy(
      out.policy, cfg.sampler, cfg.grid(), eval_reference(ds, cfg.eval.condition),
      cfg.reward, cfg.eval.n_batches, cfg.eval.batch_size, cfg.eval.k,
      cfg.eval.condition, root);
  write_json_file(dir / "metrics.json",
                  json{{"kl", report_to_json(ev.kl)},
                       {"reward", report_to_json(ev.reward)},
                       {"n_batches", cfg.eval.n_batches},
                       {"batch_size", cfg.eval.batch_size},
                       {"k", cfg.eval.k},
                       {"config_hash", cfg.hash_hex},
                       {"seed", cfg.seed},
                       {"version", kVersion}});
  ro.message = "trained " + std::to_string(cfg.train.episodes) +
               " episodes; kl " + describe(ev.kl) + ", reward " +
               describe(ev.reward) + "; artifacts in " + dir.string();
  return ro;
}

RunOutcome run_target_reward(const ExperimentConfig& cfg, bool quiet) {
  if (!cfg.target)
    throw ConfigError("$.target: section required for target-reward");
  const TargetSection& tg = *cfg.target;
  const auto warm = load_train_init(cfg);
  const fs::path dir = make_run_dir(cfg, "target-reward");
  RngStream root(cfg.seed);
  RngStream data_rng = root.derive("data");
  Dataset ds = cfg.dataset.realize(data_rng);
  save_dataset_csv((dir / "dataset.csv").string(), ds, artifact_meta(cfg));

  const int full_eps = cfg.train.episodes;
  const int probe_eps =
      std::max(1, static_cast<int>(std::lround(tg.probe_fraction * full_eps)));

  std::ofstream search(dir / "beta_search.jsonl");
  if (!search)
    throw std::runtime_error("cannot write " + (dir / "beta_search.jsonl").string());
  int attempt = 0;

  struct Point {
    double beta = 0.0, reward = 0.0, kl = 0.0;
  };
  auto measure = [&](double beta, int episodes, int n_batches,
                     const char* phase, FitOutcome* keep) -> Point {
    RngStream att = root.derive("search").derive(static_cast<std::uint64_t>(attempt));
    FitOutcome fo = fit_once(cfg, beta, episodes, ds, warm, att, {});
    if (fo.diverged) {
      char msg[128];
      std::snprintf(msg, sizeof msg, "target-reward: run at beta=%.6g diverged: ",
                    beta);
      throw std::runtime_error(msg + fo.reason);
    }
    const BatchProtocolResult ev = eval_policy(
        fo.policy, cfg.sampler, cfg.grid(), eval_reference(ds, cfg.eval.condition),
        cfg.reward, n_batches, cfg.eval.batch_size, cfg.eval.k,
        cfg.eval.condition, att);
    search << json{{"phase", phase},
                   {"attempt", attempt},
                   {"beta", beta},
                   {"episodes", episodes},
                   {"mean_reward", ev.reward.mean},
                   {"kl", ev.kl.mean}}
                  .dump()
           << "\n"
           << std::flush;
    if (!quiet)
      std::cout << phase << " " << attempt << ": beta " << beta << " -> reward "
                << ev.reward.mean << ", kl " << ev.kl.mean << "\n"
                << std::flush;
    ++attempt;
    if (keep) *keep = std::move(fo);
    return Point{beta, ev.reward.mean, ev.kl.mean};
  };

  double lo = tg.beta_lo, hi = tg.beta_hi;
  double chosen = lo;
  bool settled = false;
  const Point plo = measure(lo, probe_eps, tg.probe_batches, "probe", nullptr);
  if (std::abs(plo.reward - tg.reward) <= tg.tol) {
    chosen = lo;
    settled = true;
  } else {
    const Point phi = measure(hi, probe_eps, tg.probe_batches, "probe", nullptr);
    if (std::abs(phi.reward - tg.reward) <= tg.tol) {
      chosen = hi;
      settled = true;
    } else if (tg.reward < plo.reward - tg.tol || tg.reward > phi.reward + tg.tol) {
      char msg[192];
      std::snprintf(msg, sizeof msg,
                    "$.target: bracket [%.6g, %.6g] does not straddle target "
                    "%.6g (measured mean rewards %.6g and %.6g)",
                    lo, hi, tg.reward, plo.reward, phi.reward);
      throw ConfigError(msg);
    } else {
      double best_err = std::abs(phi.reward - tg.reward);
      chosen = hi;
      if (std::abs(plo.reward - tg.reward) < best_err) {
        best_err = std::abs(plo.reward - tg.reward);
        chosen = lo;
      }
      for (int it = 0; it < tg.max_iters && !settled; ++it) {
        const double mid = 0.5 * (lo + hi);
        const Point pm = measure(mid, probe_eps, tg.probe_batches, "probe", nullptr);
        if (std::abs(pm.reward - tg.reward) < best_err) {
          best_err = std::abs(pm.reward - tg.reward);
          chosen = mid;
        }
        if (std::abs(pm.reward - tg.reward) <= tg.tol) {
          chosen = mid;
          settled = true;
        } else if (pm.reward < tg.reward) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
    }
  }

  // Full-budget run at the selected beta, refined further if the full run
  // lands outside the tolerance (probe runs are biased by their short budget).
  double flo = lo, fhi = hi;
  double beta = chosen;
  FitOutcome final_fit;
  Point final_pt;
  int full_runs = 0;
  for (;;) {
    final_pt = measure(beta, full_eps, cfg.eval.n_batches, "full", &final_fit);
    ++full_runs;
    if (std::abs(final_pt.reward - tg.reward) <= tg.tol) break;
    if (full_runs > tg.full_refine_iters) break;
    if (final_pt.reward < tg.reward)
      flo = beta;
    else
      fhi = beta;
    beta = 0.5 * (flo + fhi);
  }

  std::ofstream stats_out(dir / "stats.jsonl");
  for (const auto& s : final_fit.stats)
    stats_out << stats_to_json(s).dump() << "\n";
  stats_out.close();
  json extra{{"config_hash", cfg.hash_hex}, {"seed", cfg.seed},
             {"beta", final_pt.beta}};
  save_model((dir / "checkpoint.ckpt").string(), final_fit.policy,
             final_fit.critic ? &*final_fit.critic : nullptr, extra);

  const bool hit = std::abs(final_pt.reward - tg.reward) <= tg.tol;
  write_json_file(dir / "metrics.json",
                  json{{"beta", final_pt.beta},
                       {"target", tg.reward},
                       {"tol", tg.tol},
                       {"hit", hit},
                       {"mean_reward", final_pt.reward},
                       {"kl", final_pt.kl},
                       {"attempts", attempt},
                       {"full_runs", full_runs},
                       {"probe_episodes", probe_eps},
                       {"config_hash", cfg.hash_hex},
                       {"seed", cfg.seed},
                       {"version", kVersion}});
  RunOutcome ro{dir, false, ""};
  char line[256];
  std::snprintf(line, sizeof line,
                "beta %.6g -> mean reward %.4g (target %.4g +/- %.2g), kl %.4g; "
                "artifacts in %s",
                final_pt.beta, final_pt.reward, tg.reward, tg.tol, final_pt.kl,
                dir.string().c_str());
  ro.message = line;
  if (!hit) {
    ro.failed = true;
    ro.message = "target reward not reached: " + ro.message;
  }
  return ro;
}

RunOutcome run_eval(const ExperimentConfig& cfg,
                    const std::string& checkpoint_path, bool quiet) {
  (void)quiet;
  LoadedModel model = load_model(checkpoint_path);
  if (!(model.policy.sched == cfg.schedule))
    throw ConfigError("eval: checkpoint '" + checkpoint_path +
                      "' was trained under a different schedule");
  const fs::path dir = make_run_dir(cfg, "eval");
  RngStream root(cfg.seed);
  RngStream data_rng = root.derive("data");
  const Dataset ds = cfg.dataset.realize(data_rng);
  const BatchProtocolResult ev = eval_policy(
      model.policy, cfg.sampler, cfg.grid(), eval_reference(ds, cfg.eval.condition),
      cfg.reward, cfg.eval.n_batches, cfg.eval.batch_size, cfg.eval.k,
      cfg.eval.condition, root);
  write_json_file(dir / "metrics.json",
                  json{{"kl", report_to_json(ev.kl)},
                       {"reward", report_to_json(ev.reward)},
                       {"checkpoint", checkpoint_path},
                       {"n_batches", cfg.eval.n_batches},
                       {"batch_size", cfg.eval.batch_size},
                       {"k", cfg.eval.k},
                       {"config_hash", cfg.hash_hex},
                       {"seed", cfg.seed},
                       {"version", kVersion}});
  return RunOutcome{dir, false,
                    "kl " + describe(ev.kl) + ", reward " + describe(ev.reward) +
                        "; metrics in " + dir.string()};
}

RunOutcome run_generate(const ExperimentConfig& cfg,
                        const std::string& checkpoint_path, bool quiet) {
  (void)quiet;
  LoadedModel model = load_model(checkpoint_path);
  if (!(model.policy.sched == cfg.schedule))
    throw ConfigError("generate: checkpoint '" + checkpoint_path +
                      "' was trained under a different schedule");
  validate_sampler(cfg.sampler, cfg.schedule, cfg.grid());
  const auto cond =
      checked_condition(model.policy, cfg.generate.condition, "generate");
  const fs::path dir = make_run_dir(cfg, "generate");
  RngStream root(cfg.seed);
  const Matrix samples = generate(cfg.sampler, cfg.schedule, cfg.grid(),
                                  model.policy, cfg.generate.n, root, cond);
  save_samples_csv((dir / "samples.csv").string(), samples,
                   artifact_meta(cfg) + " checkpoint=" + checkpoint_path);
  return RunOutcome{dir, false,
                    std::to_string(cfg.generate.n) + " samples in " +
                        (dir / "samples.csv").string()};
}

RunOutcome run_diagnose(const ExperimentConfig& cfg, bool quiet) {
  if (!cfg.diagnostics)
    throw ConfigError("$.diagnostics: section required for diagnose-score");
  const DiagnosticsSection& dg = *cfg.diagnostics;
  const fs::path dir = make_run_dir(cfg, "diagnose-score");
  RngStream root(cfg.seed);

  DatasetSpec pool_spec = cfg.dataset;
  if (pool_spec.kind != DatasetKind::Csv) pool_spec.n = dg.reference_m;
  RngStream pool_rng = root.derive("data");
  const Dataset pool = pool_spec.realize(pool_rng);

  if (!quiet)
    std::cout << "scoring " << dg.m_list.size() << " sample sizes x "
              << dg.t_list.size() << " times on a pool of " << pool.size()
              << " points\n"
              << std::flush;
  RngStream diag_rng = root.derive("diag");
  const auto rows =
      estimator_diagnostics(dg.m_list, cfg.schedule, pool, dg.t_list,
                            dg.n_states, dg.n_repeats, diag_rng);

  const fs::path csv = dir / "diagnostics.csv";
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << "# " << artifact_meta(cfg) << "\n";
  out << "t,m,bias_l1,variance,mse\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g,%.17g\n", r.t, r.m,
                  r.bias_l1, r.variance, r.mse);
    out << buf;
  }
  out.close();
  return RunOutcome{dir, false, "diagnostics table in " + csv.string()};
}

}  // namespace diffrl
