#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sma/env/testbed.hpp"
#include "sma/meta/snn_policy.hpp"
#include "sma/rl/learner.hpp"

namespace sma::harness {

// Every tunable of a run. Defaults are the desk profile; the paper profile
// swaps in the original scale (see default_config).
struct Config {
  std::string profile = "desk";
  std::uint64_t seed = 1;
  std::string out = "runs/desk";

  env::TestbedConfig env;

  // Policy network and plasticity.
  std::vector<int> hidden{64, 32, 16};
  int plastic_layer = 2;
  std::string layout = "per_post";
  double lif_decay = 0.9048374180359595;  // exp(-1/10)
  double threshold = 1.0;
  double surrogate_slope = 0.3;
  double surrogate_width = 1.0;
  double readout_decay = 0.9048374180359595;
  double update_scale = 1e-3;
  double rate_scale = 1e-3;
  int window = 30;
  std::vector<int> value_hidden{64, 64};
  std::vector<int> adapter_hidden{64, 64};
  int latent_dim = 8;
  int history_len = 10;
  double modulator_gain = 100.0;  // desk: lifts O(1) modulators above the slow trace rates

  double gamma = 0.99;
  double gae_lambda = 0.95;

  // Phase 0: PPO pre-training on nominal, noise-free dynamics.
  int ppo_envs = 256;
  int ppo_steps = 25;
  rl::PpoConfig ppo;
  double ppo_lr = 1e-3;
  double ppo_lr_decay = 0.999;
  int pretrain_iters = 200;
  double pretrain_threshold = 600.0;
  int pretrain_eval_episodes = 20;

  // Phase 1 and baselines: A2C over truncation windows.
  int a2c_envs = 256;
  int a2c_steps = 30;  // one truncation window per update
  rl::A2cConfig a2c;
  double a2c_lr = 3e-4;
  double a2c_lr_decay = 0.999;
  double encoder_lr = 3e-4;
  double plastic_lr = 3e-4;
  double plastic_lr_decay = 0.995;
  int phase1_iters = 300;
  int rma_iters = 300;
  int roa_iters = 300;
  int plastic_iters = 300;
  double roa_lambda = 1.0;

  // Phase 2: supervised estimator regression.
  int phase2_envs = 128;
  int phase2_steps = 200;
  int phase2_epochs = 30;
  int phase2_batch = 256;
  double phase2_lr = 1e-3;
  double phase2_holdout = 0.25;

  // Evaluation.
  int eval_seeds = 20;
  int eval_episodes = 32;  // randomized episodes per seed (paired comparisons)
  int eval_grid = 11;
  int eval_episode_len = 500;
  double eval_noise_max = 1.0;  // upper end of the observation-noise axis

  meta::SnnPolicyConfig policy_config() const;
  void validate() const;
};

Config default_config(const std::string& profile);

// Sets one key; throws ContractError for unknown keys or unparsable values.
void set_value(Config& cfg, const std::string& key, const std::string& value);
std::string get_value(const Config& cfg, const std::string& key);
const std::vector<std::string>& config_keys();

// Ordered key -> value dump of the whole config.
std::vector<std::pair<std::string, std::string>> to_pairs(const Config& cfg);
std::string to_text(const Config& cfg);

// "key = value" lines; '#' starts a comment. Unknown keys are errors.
void apply_text(Config& cfg, const std::string& text, const std::string& origin);

// Environment overrides: SMA_<KEY> with '.' written as '_' and upper case,
// e.g. SMA_PPO_ENVS=64 sets ppo.envs.
int apply_env_overrides(Config& cfg, char** envp);
std::string env_var_name(const std::string& key);

// Profile defaults, then the optional file, then environment overrides.
Config load_config(const std::string& profile, const std::string& path, char** envp);

}  // namespace sma::harness
