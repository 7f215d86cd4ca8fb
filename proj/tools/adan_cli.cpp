#include <iostream>

#include <CLI11.hpp>

#include "adan/commands.hpp"

namespace {

struct Common {
  std::string config;
  adan::Overrides overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> lambda;
  std::optional<int> epochs;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Single seed, replacing the config's seed list");
  cmd->add_flag("--deterministic", c.overrides.deterministic, "Sequential, reproducible execution");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--lambda", c.lambda, "Transfer loss weight")->check(CLI::NonNegativeNumber);
  cmd->add_option("--threshold", c.overrides.thresholds, "Entropy threshold (repeatable)");
  cmd->add_option("--epochs", c.epochs, "Training epochs")->check(CLI::PositiveNumber);
}

int with_config(Common& c, const std::function<int(const adan::RunConfig&)>& fn) {
  adan::RunConfig cfg;
  try {
    cfg = adan::load_run_config(c.config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  c.overrides.seed = c.seed;
  if (c.out) c.overrides.output_dir = *c.out;
  c.overrides.lambda = c.lambda;
  c.overrides.epochs = c.epochs;
  adan::apply_overrides(cfg, c.overrides);
  return fn(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Early-exit domain adaptation: train, evaluate and benchmark a multi-exit LeNet"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, sweep_opts;
  std::string eval_ckpt, sweep_ckpt;
  adan::SelfcheckOptions check_opts;
  std::string fault;

  auto* train = app.add_subcommand("train", "Train one network per seed");
  add_common(train, train_opts);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the eval set");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep", "Threshold sweep with timing");
  add_common(sweep, sweep_opts);
  sweep->add_option("--checkpoint", sweep_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);

  auto* check = app.add_subcommand("selfcheck", "Gradient, MMD, routing and SIMD checks");
  check->add_option("--seed", check_opts.seed, "Seed for the random test points");
  check->add_option("--points", check_opts.points, "Random points per check")->check(CLI::PositiveNumber);
  check->add_option("--inject-fault", fault, "Corrupt a gradient on purpose")->check(CLI::IsMember({"conv-gradient"}));

  CLI11_PARSE(app, argc, argv);

  if (*train) return with_config(train_opts, [](const adan::RunConfig& c) { return adan::cmd_train(c, std::cout, std::cerr); });
  if (*eval) {
    return with_config(eval_opts, [&](const adan::RunConfig& c) {
      return adan::cmd_eval(c, eval_ckpt, eval_opts.overrides.thresholds, std::cout, std::cerr);
    });
  }
  if (*sweep) {
    return with_config(sweep_opts, [&](const adan::RunConfig& c) { return adan::cmd_sweep(c, sweep_ckpt, std::cout, std::cerr); });
  }
  check_opts.corrupt_conv_gradient = fault == "conv-gradient";
  return adan::cmd_selfcheck(check_opts, std::cout, std::cerr);
}
