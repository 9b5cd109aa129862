#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "diffrl/checkpoint.hpp"
#include "diffrl/config.hpp"
#include "diffrl/eval.hpp"

namespace diffrl {

// A policy (plus optional critic) restored from a model checkpoint, with the
// manifest metadata needed to refuse mismatched schedules.
struct LoadedModel {
  GaussianPolicy policy;
  std::optional<ValueFunction> critic;
  nlohmann::json meta;

  int cond_dim() const {
    return policy.mean_spec.input_dim() - 1 - policy.state_dim();
  }
};

Checkpoint model_checkpoint(const GaussianPolicy& policy,
                            const ValueFunction* critic,
                            nlohmann::json extra_meta = nlohmann::json::object());
void save_model(const std::string& path, const GaussianPolicy& policy,
                const ValueFunction* critic,
                nlohmann::json extra_meta = nlohmann::json::object());
LoadedModel load_model(const std::string& path);

// Creates <out_dir>/<command>-<hash8>-s<seed>[-NNN] (append-only: reruns get
// a fresh suffix) and writes run.json with the config, its hash, the seed,
// and the code version.
std::filesystem::path make_run_dir(const ExperimentConfig& cfg,
                                   const std::string& command);

struct RunOutcome {
  std::filesystem::path dir;
  bool failed = false;  // runtime abort; the CLI maps this to exit code 3
  std::string message;
};

// One training run under the config's algo (actor-critic or a policy-gradient
// baseline), with beta and the episode budget overridable so the reward
// targeting driver can reuse it.  Streams stats, applies warm starts, and
// forwards the callback.
struct FitOutcome {
  GaussianPolicy policy;
  std::optional<ValueFunction> critic;
  std::vector<EpisodeStats> stats;
  bool diverged = false;
  std::string reason;
};

FitOutcome fit_once(const ExperimentConfig& cfg, double beta, int episodes,
                    const Dataset& ds, const std::optional<LoadedModel>& warm,
                    const RngStream& root, const EpisodeCallback& callback = {});

// Loads the warm-start / pretrained checkpoint named by the config's train
// section, if any, and checks it against the config schedule.
std::optional<LoadedModel> load_train_init(const ExperimentConfig& cfg);

// Repeated-batch scoring of a policy: generated batches against a reference
// sample set, plus mean terminal reward on the generated points.
BatchProtocolResult eval_policy(const GaussianPolicy& policy, SamplerKind kind,
                                const TimeGrid& grid, const Matrix& reference,
                                const RewardSpec& reward, int n_batches,
                                int batch_size, int k,
                                const std::optional<Vector>& condition,
                                const RngStream& rng);

RunOutcome run_train(const ExperimentConfig& cfg, bool quiet);
RunOutcome run_target_reward(const ExperimentConfig& cfg, bool quiet);
RunOutcome run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                    bool quiet);
RunOutcome run_generate(const ExperimentConfig& cfg,
                        const std::string& checkpoint_path, bool quiet);
RunOutcome run_diagnose(const ExperimentConfig& cfg, bool quiet);

// Fixed stats field set, identical across algorithms and runs.  Wall time is
// deliberately absent so reruns are byte-identical.
nlohmann::json stats_to_json(const EpisodeStats& s);
nlohmann::json report_to_json(const MetricReport& r);

}  // namespace diffrl
