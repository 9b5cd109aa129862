#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "diffrl/drivers.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::int64_t seed = 0;
  bool quiet = false;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* sub, CommonArgs& args, bool with_checkpoint) {
  sub->add_option("-c,--config", args.config, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  args.seed_opt =
      sub->add_option("--seed", args.seed, "override the config seed");
  sub->add_option("-o,--out", args.out, "output directory (default from config)");
  sub->add_flag("-q,--quiet", args.quiet, "suppress progress output");
  if (with_checkpoint)
    sub->add_option("--checkpoint", args.checkpoint, "model checkpoint to load")
        ->required()
        ->check(CLI::ExistingFile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "diffrl: score-driven generative models trained by "
      "continuous-time reinforcement learning"};
  app.require_subcommand(1);

  CommonArgs args;
  CLI::App* cmd_train = app.add_subcommand("train", "train a model");
  add_common(cmd_train, args, false);
  CLI::App* cmd_target = app.add_subcommand(
      "target-reward", "bisect the reward weight to hit a target mean reward");
  add_common(cmd_target, args, false);
  CLI::App* cmd_eval =
      app.add_subcommand("eval", "score a checkpoint with the batch protocol");
  add_common(cmd_eval, args, true);
  CLI::App* cmd_gen =
      app.add_subcommand("generate", "sample from a checkpoint to CSV");
  add_common(cmd_gen, args, true);
  CLI::App* cmd_diag = app.add_subcommand(
      "diagnose-score", "bias/variance/mse table for the score estimator");
  add_common(cmd_diag, args, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    diffrl::ExperimentConfig cfg = diffrl::parse_config_file(args.config);
    if (args.seed_opt && args.seed_opt->count() > 0) {
      if (args.seed < 0) throw diffrl::ConfigError("--seed: must be >= 0");
      diffrl::override_seed(cfg, static_cast<std::uint64_t>(args.seed));
    }
    if (!args.out.empty()) cfg.out_dir = args.out;

    diffrl::RunOutcome out;
    if (*cmd_train)
      out = diffrl::run_train(cfg, args.quiet);
    else if (*cmd_target)
      out = diffrl::run_target_reward(cfg, args.quiet);
    else if (*cmd_eval)
      out = diffrl::run_eval(cfg, args.checkpoint, args.quiet);
    else if (*cmd_gen)
      out = diffrl::run_generate(cfg, args.checkpoint, args.quiet);
    else
      out = diffrl::run_diagnose(cfg, args.quiet);

    if (out.failed) {
      std::cerr << out.message << "\n";
      return 3;
    }
    if (!args.quiet) std::cout << out.message << "\n";
    return 0;
  } catch (const diffrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
