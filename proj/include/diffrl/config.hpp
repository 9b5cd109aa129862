#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "diffrl/baselines.hpp"
#include "diffrl/dataset.hpp"
#include "diffrl/qlearning.hpp"
#include "diffrl/schedule.hpp"
#include "diffrl/simulators.hpp"

namespace diffrl {

// Configuration problem: unknown key, missing field, bad value.  Reported
// with the JSON path of the offending field.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class DatasetKind { GaussianMixture, SwissRoll, Csv };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::GaussianMixture;
  int n = 0;
  GaussianMixture mixture;                 // GaussianMixture
  std::optional<Matrix> mixture_labels;    // per-component condition columns
  double noise = 0.0;                      // SwissRoll
  std::string path;                        // Csv

  // csv loads from disk; generative kinds draw n points from rng.
  Dataset realize(RngStream& rng) const;
};

enum class TrainAlgo { QLearning, Ddpo, Dpok };

struct TrainSection {
  TrainAlgo algo = TrainAlgo::QLearning;
  int episodes = 0;
  int batch = 1;
  double theta = 1.0;
  double lr_actor = 1e-3;
  double lr_critic = 1e-3;
  UpdateRule update_rule = UpdateRule::Adam;
  LrDecay lr_decay = LrDecay::Constant;
  double lr_decay_scale = 1000.0;
  TerminalValue terminal_value = TerminalValue::Anchor;
  double boundary_penalty = 1.0;
  SignalConfig signal;
  std::vector<int> hidden = {64, 64};
  int checkpoint_every = 0;
  std::optional<std::string> init_checkpoint;  // qlearning warm start (actor)
  std::optional<DiscreteConditionDist> condition;
  // Baseline-only fields.
  double gamma = 1.0;
  double lr = 1e-3;
  std::string pretrained;
};

struct EvalSection {
  int n_batches = 100;
  int batch_size = 300;
  int k = 1;
  std::optional<Vector> condition;
};

struct GenerateSection {
  int n = 300;
  std::optional<Vector> condition;
};

struct TargetSection {
  double reward = 0.0;
  double tol = 0.02;
  double beta_lo = 0.0;
  double beta_hi = 1.0;
  double probe_fraction = 0.2;
  int probe_batches = 20;
  int max_iters = 12;
  int full_refine_iters = 4;
};

struct DiagnosticsSection {
  std::vector<double> t_list;
  std::vector<int> m_list;
  int n_states = 2000;
  int n_repeats = 50;
  int reference_m = 100000;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  DiffusionSchedule schedule;
  SamplerKind sampler = SamplerKind::SdeEuler;
  int steps = 0;
  DatasetSpec dataset;
  RewardSpec reward;
  TrainSection train;
  EvalSection eval;
  GenerateSection generate;
  std::optional<TargetSection> target;
  std::optional<DiagnosticsSection> diagnostics;

  nlohmann::json raw;     // canonical parsed document
  std::string hash_hex;   // FNV-1a of the canonical dump, after overrides

  TimeGrid grid() const { return TimeGrid{schedule.horizon, steps}; }
  TrainConfig train_config() const;        // qlearning algo only
  BaselineConfig baseline_config() const;  // ddpo/dpok algos only
};

// Strict parse: every key must be known, required fields present, values in
// range.  Throws ConfigError with the JSON path on violation.
ExperimentConfig parse_config_json(const nlohmann::json& doc);
ExperimentConfig parse_config_file(const std::string& path);

// Applies a --seed override and recomputes the hash.
void override_seed(ExperimentConfig& cfg, std::uint64_t seed);

std::string to_string(SamplerKind kind);
SamplerKind sampler_from_string(const std::string& s);

nlohmann::json schedule_to_json(const DiffusionSchedule& sched);
DiffusionSchedule schedule_from_json(const nlohmann::json& j);

std::uint64_t fnv1a_hash(const std::string& bytes);

}  // namespace diffrl
