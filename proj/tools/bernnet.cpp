// bernnet: train Bernstein-activation networks and run the gradient-health experiments.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "bernnet/config.hpp"
#include "bernnet/error.hpp"
#include "bernnet/experiments.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kPropertyFailure = 2, kNumeric = 3 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> subset_rows;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config_path, "JSON experiment config");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "override the output directory");
  cmd->add_option("--subset-rows", c.subset_rows, "cap the training rows (HIGGS: rows read; synthetic: samples)");
  cmd->add_flag("--quiet", c.quiet, "suppress per-epoch progress");
}

bernnet::ExperimentConfig resolve(const Common& c) {
  bernnet::ExperimentConfig cfg = bernnet::load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.output_dir = *c.out;
  if (c.subset_rows) {
    if (cfg.dataset.kind == "higgs_csv") {
      cfg.dataset.max_rows = *c.subset_rows;
    } else if (cfg.dataset.kind == "mnist") {
      cfg.dataset.train_rows = *c.subset_rows;
    } else {
      cfg.dataset.target.samples = *c.subset_rows;
    }
  }
  bernnet::validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep networks with Bernstein-polynomial activations"};
  app.require_subcommand(1);
  Common common;
  bool inject_fault = false;
  std::uint64_t verify_seed = 1;

  auto* train = app.add_subcommand("train", "train one config and write its run directory");
  auto* exp1 = app.add_subcommand("exp1", "minimum |σ′| per epoch and per depth");
  auto* exp2 = app.add_subcommand("exp2", "dead-neuron ratios, first-layer MAG and heatmaps");
  auto* exp3 = app.add_subcommand("exp3", "best training loss versus depth");
  auto* approx = app.add_subcommand("approx", "approximation error versus depth on synthetic targets");
  for (auto* cmd : {train, exp1, exp2, exp3, approx}) add_common(cmd, common, true);
  auto* verify = app.add_subcommand("verify", "run the invariant battery");
  verify->add_option("--seed", verify_seed, "seed for the random cases");
  verify->add_flag("--inject-fault", inject_fault, "perturb one backward formula (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (verify->parsed()) {
      const auto results = bernnet::cmd_verify({verify_seed, inject_fault}, std::cout);
      for (const auto& r : results)
        if (!r.pass) return kPropertyFailure;
      return kOk;
    }
    const bernnet::ExperimentConfig cfg = resolve(common);
    std::ostream* log = common.quiet ? nullptr : &std::cerr;
    if (train->parsed()) bernnet::cmd_train(cfg, std::cout, log);
    if (exp1->parsed()) bernnet::cmd_exp1(cfg, std::cout, log);
    if (exp2->parsed()) bernnet::cmd_exp2(cfg, std::cout, log);
    if (exp3->parsed()) bernnet::cmd_exp3(cfg, std::cout, log);
    if (approx->parsed()) bernnet::cmd_approx(cfg, std::cout, log);
    return kOk;
  } catch (const bernnet::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const bernnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
