#include "diffrl/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace diffrl {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError("config " + path + ": " + msg);
}

void expect_object(const json& j, const std::string& path,
                   const std::set<std::string>& allowed) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) fail(path + "." + key, "unknown key");
}

const json& req(const json& j, const std::string& path, const std::string& key) {
  if (!j.contains(key)) fail(path + "." + key, "missing required field");
  return j.at(key);
}

double as_double(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

std::uint64_t as_u64(const json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !j.is_number_integer())
    fail(path, "expected a nonnegative integer");
  const auto v = j.get<std::int64_t>();
  if (v < 0) fail(path, "expected a nonnegative integer");
  return static_cast<std::uint64_t>(v);
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

Vector as_vector(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of numbers");
  Vector v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = as_double(j[i], path);
  return v;
}

std::vector<int> as_int_list(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of integers");
  std::vector<int> v;
  for (size_t i = 0; i < j.size(); ++i) v.push_back(as_int(j[i], path));
  return v;
}

std::vector<double> as_double_list(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of numbers");
  std::vector<double> v;
  for (size_t i = 0; i < j.size(); ++i) v.push_back(as_double(j[i], path));
  return v;
}

DiffusionSchedule parse_schedule(const json& j, const std::string& path) {
  const std::string kind = as_string(req(j, path, "kind"), path + ".kind");
  try {
    if (kind == "constant") {
      expect_object(j, path, {"kind", "f", "g", "horizon"});
      return DiffusionSchedule::constant(
          as_double(req(j, path, "f"), path + ".f"),
          as_double(req(j, path, "g"), path + ".g"),
          as_double(req(j, path, "horizon"), path + ".horizon"));
    }
    if (kind == "ddpm_linear") {
      expect_object(j, path, {"kind", "beta_min", "beta_max", "horizon"});
      return DiffusionSchedule::ddpm_linear(
          as_double(req(j, path, "beta_min"), path + ".beta_min"),
          as_double(req(j, path, "beta_max"), path + ".beta_max"),
          as_double(req(j, path, "horizon"), path + ".horizon"));
    }
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
  fail(path + ".kind", "expected 'constant' or 'ddpm_linear'");
}

DatasetSpec parse_dataset(const json& j, const std::string& path) {
  DatasetSpec spec;
  const std::string kind = as_string(req(j, path, "kind"), path + ".kind");
  if (kind == "gaussian_mixture") {
    expect_object(j, path,
                  {"kind", "n", "weights", "means", "variances", "labels"});
    spec.kind = DatasetKind::GaussianMixture;
    spec.n = as_int(req(j, path, "n"), path + ".n");
    spec.mixture.weights = as_vector(req(j, path, "weights"), path + ".weights");
    const json& means = req(j, path, "means");
    if (!means.is_array() || means.empty())
      fail(path + ".means", "expected a nonempty array of points");
    for (size_t i = 0; i < means.size(); ++i)
      spec.mixture.means.push_back(
          as_vector(means[i], path + ".means[" + std::to_string(i) + "]"));
    spec.mixture.variances =
        as_vector(req(j, path, "variances"), path + ".variances");
    const size_t k = spec.mixture.means.size();
    if (static_cast<size_t>(spec.mixture.weights.size()) != k ||
        static_cast<size_t>(spec.mixture.variances.size()) != k)
      fail(path, "weights, means, and variances must have equal length");
    if (std::abs(spec.mixture.weights.sum() - 1.0) > 1e-9)
      fail(path + ".weights", "must sum to 1");
    for (int i = 0; i < spec.mixture.variances.size(); ++i)
      if (!(spec.mixture.variances[i] > 0.0))
        fail(path + ".variances", "must be positive");
    if (j.contains("labels")) {
      const json& labels = j.at("labels");
      if (!labels.is_array() || labels.size() != k)
        fail(path + ".labels", "expected one label vector per component");
      Vector first = as_vector(labels[0], path + ".labels[0]");
      Matrix lab(first.size(), k);
      lab.col(0) = first;
      for (size_t i = 1; i < k; ++i) {
        Vector li = as_vector(labels[i], path + ".labels[" + std::to_string(i) + "]");
        if (li.size() != first.size())
          fail(path + ".labels", "label vectors must share one dimension");
        lab.col(static_cast<int>(i)) = li;
      }
      spec.mixture_labels = lab;
    }
  } else if (kind == "swiss_roll") {
    expect_object(j, path, {"kind", "n", "noise"});
    spec.kind = DatasetKind::SwissRoll;
    spec.n = as_int(req(j, path, "n"), path + ".n");
    spec.noise = j.contains("noise") ? as_double(j.at("noise"), path + ".noise") : 0.0;
  } else if (kind == "csv") {
    expect_object(j, path, {"kind", "path"});
    spec.kind = DatasetKind::Csv;
    spec.path = as_string(req(j, path, "path"), path + ".path");
  } else {
    fail(path + ".kind", "expected 'gaussian_mixture', 'swiss_roll', or 'csv'");
  }
  if (spec.kind != DatasetKind::Csv && spec.n <= 0)
    fail(path + ".n", "must be positive");
  return spec;
}

RewardSpec parse_reward(const json& j, const std::string& path) {
  const std::string kind = as_string(req(j, path, "kind"), path + ".kind");
  const double beta = as_double(req(j, path, "beta"), path + ".beta");
  if (beta < 0.0) fail(path + ".beta", "must be >= 0");
  try {
    if (kind == "quadratic") {
      expect_object(j, path, {"kind", "beta", "center"});
      return RewardSpec::quadratic(as_vector(req(j, path, "center"), path + ".center"),
                                   beta);
    }
    if (kind == "indicator_band") {
      expect_object(j, path, {"kind", "beta", "axis", "lo", "hi"});
      return RewardSpec::indicator_band(
          as_int(req(j, path, "axis"), path + ".axis"),
          as_double(req(j, path, "lo"), path + ".lo"),
          as_double(req(j, path, "hi"), path + ".hi"), beta);
    }
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
  fail(path + ".kind", "expected 'quadratic' or 'indicator_band'");
}

TrainSection parse_train(const json& j, const std::string& path) {
  TrainSection t;
  const std::string algo = as_string(req(j, path, "algo"), path + ".algo");
  const std::set<std::string> common = {"algo", "episodes", "batch",
                                        "checkpoint_every"};
  if (algo == "qlearning") {
    t.algo = TrainAlgo::QLearning;
    std::set<std::string> allowed = common;
    for (const char* k :
         {"theta", "lr_actor", "lr_critic", "update_rule", "lr_decay",
          "lr_decay_scale", "terminal_value", "boundary_penalty", "signal",
          "hidden", "init_checkpoint", "condition"})
      allowed.insert(k);
    expect_object(j, path, allowed);
    t.theta = as_double(req(j, path, "theta"), path + ".theta");
    if (j.contains("lr_actor"))
      t.lr_actor = as_double(j.at("lr_actor"), path + ".lr_actor");
    if (j.contains("lr_critic"))
      t.lr_critic = as_double(j.at("lr_critic"), path + ".lr_critic");
    if (j.contains("update_rule")) {
      const std::string r = as_string(j.at("update_rule"), path + ".update_rule");
      if (r == "adam")
        t.update_rule = UpdateRule::Adam;
      else if (r == "sa")
        t.update_rule = UpdateRule::Sa;
      else
        fail(path + ".update_rule", "expected 'adam' or 'sa'");
    }
    if (j.contains("lr_decay")) {
      const std::string r = as_string(j.at("lr_decay"), path + ".lr_decay");
      if (r == "constant")
        t.lr_decay = LrDecay::Constant;
      else if (r == "inv_sqrt")
        t.lr_decay = LrDecay::InvSqrt;
      else
        fail(path + ".lr_decay", "expected 'constant' or 'inv_sqrt'");
    }
    if (j.contains("lr_decay_scale"))
      t.lr_decay_scale = as_double(j.at("lr_decay_scale"), path + ".lr_decay_scale");
    if (j.contains("terminal_value")) {
      const std::string r = as_string(j.at("terminal_value"), path + ".terminal_value");
      if (r == "anchor")
        t.terminal_value = TerminalValue::Anchor;
      else if (r == "learned")
        t.terminal_value = TerminalValue::Learned;
      else
        fail(path + ".terminal_value", "expected 'anchor' or 'learned'");
    }
    if (j.contains("boundary_penalty"))
      t.boundary_penalty =
          as_double(j.at("boundary_penalty"), path + ".boundary_penalty");
    {
      const json& s = req(j, path, "signal");
      expect_object(s, path + ".signal", {"m", "epsilon"});
      t.signal.m = as_int(req(s, path + ".signal", "m"), path + ".signal.m");
      if (s.contains("epsilon"))
        t.signal.epsilon = as_double(s.at("epsilon"), path + ".signal.epsilon");
      if (!(t.signal.epsilon > 0.0)) fail(path + ".signal.epsilon", "must be > 0");
    }
    if (j.contains("hidden")) {
      t.hidden = as_int_list(j.at("hidden"), path + ".hidden");
      if (t.hidden.empty()) fail(path + ".hidden", "must be nonempty");
    }
    if (j.contains("init_checkpoint"))
      t.init_checkpoint = as_string(j.at("init_checkpoint"), path + ".init_checkpoint");
    if (j.contains("condition")) {
      const json& c = j.at("condition");
      expect_object(c, path + ".condition", {"values", "probs"});
      DiscreteConditionDist dist;
      const json& values = req(c, path + ".condition", "values");
      if (!values.is_array() || values.empty())
        fail(path + ".condition.values", "expected a nonempty array");
      for (size_t i = 0; i < values.size(); ++i)
        dist.values.push_back(as_vector(
            values[i], path + ".condition.values[" + std::to_string(i) + "]"));
      dist.probs = as_vector(req(c, path + ".condition", "probs"),
                             path + ".condition.probs");
      t.condition = std::move(dist);
    }
  } else if (algo == "ddpo" || algo == "dpok") {
    t.algo = algo == "ddpo" ? TrainAlgo::Ddpo : TrainAlgo::Dpok;
    std::set<std::string> allowed = common;
    for (const char* k : {"gamma", "lr", "pretrained"}) allowed.insert(k);
    expect_object(j, path, allowed);
    t.gamma = t.algo == TrainAlgo::Ddpo ? 0.0 : 1.0;
    if (j.contains("gamma")) t.gamma = as_double(j.at("gamma"), path + ".gamma");
    if (j.contains("lr")) t.lr = as_double(j.at("lr"), path + ".lr");
    t.pretrained = as_string(req(j, path, "pretrained"), path + ".pretrained");
  } else {
    fail(path + ".algo", "expected 'qlearning', 'ddpo', or 'dpok'");
  }
  t.episodes = as_int(req(j, path, "episodes"), path + ".episodes");
  t.batch = as_int(req(j, path, "batch"), path + ".batch");
  if (j.contains("checkpoint_every"))
    t.checkpoint_every =
        as_int(j.at("checkpoint_every"), path + ".checkpoint_every");
  if (t.episodes < 0) fail(path + ".episodes", "must be >= 0");
  if (t.batch <= 0) fail(path + ".batch", "must be positive");
  if (t.checkpoint_every < 0) fail(path + ".checkpoint_every", "must be >= 0");
  return t;
}

}  // namespace

Dataset DatasetSpec::realize(RngStream& rng) const {
  switch (kind) {
    case DatasetKind::GaussianMixture: {
      std::vector<int> comp;
      Dataset ds = gen_gaussian_mixture(mixture, n, rng,
                                        mixture_labels ? &comp : nullptr);
      if (mixture_labels) {
        Matrix cond(mixture_labels->rows(), ds.size());
        for (int j = 0; j < ds.size(); ++j)
          cond.col(j) = mixture_labels->col(comp[j]);
        ds.conditions = std::move(cond);
      }
      return ds;
    }
    case DatasetKind::SwissRoll:
      return gen_swiss_roll(n, noise, rng);
    case DatasetKind::Csv:
      return load_dataset_csv(path);
  }
  throw std::logic_error("dataset: unknown kind");
}

TrainConfig ExperimentConfig::train_config() const {
  if (train.algo != TrainAlgo::QLearning)
    throw std::logic_error("config: train_config() is for the qlearning algo");
  TrainConfig c;
  c.kind = sampler;
  c.grid = grid();
  c.episodes = train.episodes;
  c.batch = train.batch;
  c.theta = train.theta;
  c.lr_actor = train.lr_actor;
  c.lr_critic = train.lr_critic;
  c.update_rule = train.update_rule;
  c.lr_decay = train.lr_decay;
  c.lr_decay_scale = train.lr_decay_scale;
  c.terminal_value = train.terminal_value;
  c.boundary_penalty = train.boundary_penalty;
  c.signal = train.signal;
  c.reward = reward;
  c.hidden = train.hidden;
  c.condition_dist = train.condition;
  return c;
}

BaselineConfig ExperimentConfig::baseline_config() const {
  if (train.algo == TrainAlgo::QLearning)
    throw std::logic_error("config: baseline_config() is for baseline algos");
  BaselineConfig c;
  c.algo = train.algo == TrainAlgo::Ddpo ? BaselineAlgo::Ddpo : BaselineAlgo::Dpok;
  c.gamma = train.gamma;
  c.kind = sampler;
  c.grid = grid();
  c.episodes = train.episodes;
  c.batch = train.batch;
  c.lr = train.lr;
  c.reward = reward;
  return c;
}

ExperimentConfig parse_config_json(const nlohmann::json& doc) {
  expect_object(doc, "$",
                {"seed", "out_dir", "schedule", "sampler", "steps", "dataset",
                 "reward", "train", "eval", "generate", "target", "diagnostics"});
  ExperimentConfig cfg;
  cfg.seed = as_u64(req(doc, "$", "seed"), "$.seed");
  if (doc.contains("out_dir")) cfg.out_dir = as_string(doc.at("out_dir"), "$.out_dir");
  cfg.schedule = parse_schedule(req(doc, "$", "schedule"), "$.schedule");
  cfg.sampler = sampler_from_string(as_string(req(doc, "$", "sampler"), "$.sampler"));
  cfg.steps = as_int(req(doc, "$", "steps"), "$.steps");
  if (cfg.steps <= 0) fail("$.steps", "must be positive");
  cfg.dataset = parse_dataset(req(doc, "$", "dataset"), "$.dataset");
  cfg.reward = parse_reward(req(doc, "$", "reward"), "$.reward");
  cfg.train = parse_train(req(doc, "$", "train"), "$.train");

  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    expect_object(e, "$.eval", {"n_batches", "batch_size", "k", "condition"});
    if (e.contains("n_batches"))
      cfg.eval.n_batches = as_int(e.at("n_batches"), "$.eval.n_batches");
    if (e.contains("batch_size"))
      cfg.eval.batch_size = as_int(e.at("batch_size"), "$.eval.batch_size");
    if (e.contains("k")) cfg.eval.k = as_int(e.at("k"), "$.eval.k");
    if (e.contains("condition"))
      cfg.eval.condition = as_vector(e.at("condition"), "$.eval.condition");
    if (cfg.eval.n_batches <= 0 || cfg.eval.batch_size <= 0 || cfg.eval.k <= 0)
      fail("$.eval", "counts must be positive");
  }
  if (doc.contains("generate")) {
    const json& g = doc.at("generate");
    expect_object(g, "$.generate", {"n", "condition"});
    if (g.contains("n")) cfg.generate.n = as_int(g.at("n"), "$.generate.n");
    if (g.contains("condition"))
      cfg.generate.condition = as_vector(g.at("condition"), "$.generate.condition");
    if (cfg.generate.n <= 0) fail("$.generate.n", "must be positive");
  }
  if (doc.contains("target")) {
    const json& t = doc.at("target");
    expect_object(t, "$.target",
                  {"reward", "tol", "beta_lo", "beta_hi", "probe_fraction",
                   "probe_batches", "max_iters", "full_refine_iters"});
    TargetSection ts;
    ts.reward = as_double(req(t, "$.target", "reward"), "$.target.reward");
    if (t.contains("tol")) ts.tol = as_double(t.at("tol"), "$.target.tol");
    if (t.contains("beta_lo")) ts.beta_lo = as_double(t.at("beta_lo"), "$.target.beta_lo");
    ts.beta_hi = as_double(req(t, "$.target", "beta_hi"), "$.target.beta_hi");
    if (t.contains("probe_fraction"))
      ts.probe_fraction = as_double(t.at("probe_fraction"), "$.target.probe_fraction");
    if (t.contains("probe_batches"))
      ts.probe_batches = as_int(t.at("probe_batches"), "$.target.probe_batches");
    if (t.contains("max_iters"))
      ts.max_iters = as_int(t.at("max_iters"), "$.target.max_iters");
    if (t.contains("full_refine_iters"))
      ts.full_refine_iters =
          as_int(t.at("full_refine_iters"), "$.target.full_refine_iters");
    if (!(ts.tol > 0.0)) fail("$.target.tol", "must be > 0");
    if (!(ts.beta_hi > ts.beta_lo)) fail("$.target.beta_hi", "must exceed beta_lo");
    if (!(ts.probe_fraction > 0.0 && ts.probe_fraction <= 1.0))
      fail("$.target.probe_fraction", "must be in (0, 1]");
    cfg.target = ts;
  }
  if (doc.contains("diagnostics")) {
    const json& dg = doc.at("diagnostics");
    expect_object(dg, "$.diagnostics",
                  {"t_list", "m_list", "n_states", "n_repeats", "reference_m"});
    DiagnosticsSection ds;
    ds.t_list = as_double_list(req(dg, "$.diagnostics", "t_list"),
                               "$.diagnostics.t_list");
    ds.m_list = as_int_list(req(dg, "$.diagnostics", "m_list"),
                            "$.diagnostics.m_list");
    if (dg.contains("n_states"))
      ds.n_states = as_int(dg.at("n_states"), "$.diagnostics.n_states");
    if (dg.contains("n_repeats"))
      ds.n_repeats = as_int(dg.at("n_repeats"), "$.diagnostics.n_repeats");
    if (dg.contains("reference_m"))
      ds.reference_m = as_int(dg.at("reference_m"), "$.diagnostics.reference_m");
    if (ds.t_list.empty() || ds.m_list.empty())
      fail("$.diagnostics", "t_list and m_list must be nonempty");
    if (ds.n_states <= 0 || ds.n_repeats <= 0 || ds.reference_m <= 0)
      fail("$.diagnostics", "counts must be positive");
    for (int m : ds.m_list)
      if (m <= 0 || m > ds.reference_m)
        fail("$.diagnostics.m_list", "each m must be in (0, reference_m]");
    cfg.diagnostics = ds;
  }

  cfg.raw = doc;
  cfg.hash_hex = [&] {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a_hash(doc.dump())));
    return std::string(buf);
  }();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  return parse_config_json(doc);
}

void override_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.raw["seed"] = seed;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a_hash(cfg.raw.dump())));
  cfg.hash_hex = buf;
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::SdeEuler: return "sde_euler";
    case SamplerKind::DdpmStyle: return "ddpm";
    case SamplerKind::OdeEuler: return "ode_euler";
    case SamplerKind::Ddim: return "ddim";
  }
  return "?";
}

SamplerKind sampler_from_string(const std::string& s) {
  if (s == "sde_euler") return SamplerKind::SdeEuler;
  if (s == "ddpm") return SamplerKind::DdpmStyle;
  if (s == "ode_euler") return SamplerKind::OdeEuler;
  if (s == "ddim") return SamplerKind::Ddim;
  throw ConfigError("config: unknown sampler '" + s + "'");
}

nlohmann::json schedule_to_json(const DiffusionSchedule& sched) {
  nlohmann::json j;
  j["horizon"] = sched.horizon;
  if (sched.kind == ScheduleKind::Constant) {
    j["kind"] = "constant";
    j["f"] = sched.f0;
    j["g"] = sched.g0;
  } else {
    j["kind"] = "ddpm_linear";
    j["beta_min"] = sched.beta_min;
    j["beta_max"] = sched.beta_max;
  }
  return j;
}

DiffusionSchedule schedule_from_json(const nlohmann::json& j) {
  return parse_schedule(j, "$.schedule");
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace diffrl
