// sma: train, evaluate and plot spiking meta-adaptation runs.
//
// Configuration precedence: profile defaults < --config file < SMA_* env
// variables < --set key=value < --seed/--out flags.

#include <iostream>

#include "CLI11.hpp"
#include "sma/harness/checkpoint.hpp"
#include "sma/harness/commands.hpp"

using namespace sma;
using namespace sma::harness;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kPrerequisite = 3, kCorrupt = 4, kDiverged = 5 };

}  // namespace

int main(int argc, char** argv, char** envp) {
  CLI::App app{"Spiking meta-adaptation pipeline"};
  app.require_subcommand(1);

  std::string config_path, profile, out;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
  bool dry_run = false;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--profile", profile, "desk | paper (default: from the config file, else desk)");
  auto* seed_opt = app.add_option("--seed", seed, "run seed");
  app.add_option("--out", out, "run directory");
  app.add_option("--set", sets, "override one key, e.g. --set ppo.envs=64")->take_all();
  app.add_flag("--dry-run", dry_run, "validate and print the resolved config only");

  std::string stage_name;
  auto* train = app.add_subcommand("train", "run one training stage");
  train->add_option("stage", stage_name, "pretrain | phase1 | phase2 | rma | roa | plastic | all")
      ->required();
  auto* eval = app.add_subcommand("eval", "evaluate all trained policies");
  std::string plot_dir;
  auto* plot = app.add_subcommand("plot", "write SVG figures for a run directory");
  plot->add_option("run_dir", plot_dir, "run directory (default: the config's run.out)");
  app.add_subcommand("keys", "list every config key with its environment variable");

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg = load_config(profile, config_path, envp);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ContractError("--set expects key=value, got '" + kv + "'");
      set_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (*seed_opt) cfg.seed = seed;
    if (!out.empty()) cfg.out = out;
    cfg.validate();

    if (app.got_subcommand("keys")) {
      for (const auto& [k, v] : to_pairs(cfg)) {
        std::cout << k << " = " << v << "    # " << env_var_name(k) << "\n";
      }
    } else if (app.got_subcommand(train)) {
      if (stage_name == "all") {
        for (Stage s : all_stages()) cmd_train(cfg, s, dry_run, std::cout);
      } else {
        cmd_train(cfg, stage_from_string(stage_name), dry_run, std::cout);
      }
    } else if (app.got_subcommand(eval)) {
      cmd_eval(cfg, dry_run, std::cout);
    } else if (app.got_subcommand(plot)) {
      cmd_plot(plot_dir.empty() ? cfg.out : plot_dir, std::cout);
    }
  } catch (const MissingPrerequisite& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPrerequisite;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCorrupt;
  } catch (const NumericError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
