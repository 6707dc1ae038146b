#include "sma/harness/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

namespace sma::harness {
namespace {

struct Key {
  std::string name;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  // Prefer the shortest form that round-trips.
  for (int p = 1; p <= 17; ++p) {
    char s[64];
    std::snprintf(s, sizeof(s), "%.*g", p, x);
    if (std::strtod(s, nullptr) == x) return s;
  }
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) {
    throw ContractError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return x;
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) {
    throw ContractError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
  return x;
}

std::vector<int> parse_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    out.push_back(static_cast<int>(parse_int(key, item)));
  }
  if (out.empty()) throw ContractError("config: '" + key + "' expects a comma list");
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename F>
Key dbl(std::string name, F field) {
  return {name, [field](const Config& c) { return fmt(field(const_cast<Config&>(c))); },
          [field, name](Config& c, const std::string& v) { field(c) = parse_double(name, v); }};
}

template <typename F>
Key integer(std::string name, F field) {
  return {name,
          [field](const Config& c) { return std::to_string(field(const_cast<Config&>(c))); },
          [field, name](Config& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(field(c))>;
            field(c) = static_cast<T>(parse_int(name, v));
          }};
}

template <typename F>
Key ints(std::string name, F field) {
  return {name, [field](const Config& c) { return join(field(const_cast<Config&>(c))); },
          [field, name](Config& c, const std::string& v) { field(c) = parse_ints(name, v); }};
}

template <typename F>
Key text(std::string name, F field) {
  return {name, [field](const Config& c) { return field(const_cast<Config&>(c)); },
          [field](Config& c, const std::string& v) { field(c) = v; }};
}

#define F(expr) [](Config& c) -> auto& { return c.expr; }

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = {
      text("run.profile", F(profile)),
      integer("run.seed", F(seed)),
      text("run.out", F(out)),

      integer("env.episode_len", F(env.max_episode_len)),
      dbl("env.dt", F(env.dt)),
      integer("env.decimation", F(env.decimation)),
      dbl("env.inertia", F(env.inertia)),
      dbl("env.action_scale", F(env.action_scale)),
      dbl("env.torque_limit", F(env.torque_limit)),
      dbl("env.yaw_gain", F(env.yaw_gain)),
      dbl("env.q_bound", F(env.q_bound)),
      dbl("env.cmd_vx_lo", F(env.cmd_vx.lo)),
      dbl("env.cmd_vx_hi", F(env.cmd_vx.hi)),
      dbl("env.cmd_vy_lo", F(env.cmd_vy.lo)),
      dbl("env.cmd_vy_hi", F(env.cmd_vy.hi)),
      dbl("env.motor_gain_lo", F(env.ranges.motor_gain.lo)),
      dbl("env.motor_gain_hi", F(env.ranges.motor_gain.hi)),
      dbl("env.kp_lo", F(env.ranges.kp.lo)),
      dbl("env.kp_hi", F(env.ranges.kp.hi)),
      dbl("env.kd_lo", F(env.ranges.kd.lo)),
      dbl("env.kd_hi", F(env.ranges.kd.hi)),
      dbl("env.damping_lo", F(env.ranges.damping.lo)),
      dbl("env.damping_hi", F(env.ranges.damping.hi)),
      dbl("env.payload_lo", F(env.ranges.payload.lo)),
      dbl("env.payload_hi", F(env.ranges.payload.hi)),
      dbl("noise.scale", F(env.noise.scale)),
      dbl("noise.joint_pos", F(env.noise.joint_pos)),
      dbl("noise.joint_vel", F(env.noise.joint_vel)),
      dbl("noise.gravity", F(env.noise.gravity)),
      dbl("noise.lin_vel", F(env.noise.lin_vel)),
      dbl("noise.ang_vel", F(env.noise.ang_vel)),
      dbl("reward.lin_vel", F(env.reward.lin_vel)),
      dbl("reward.ang_vel", F(env.reward.ang_vel)),
      dbl("reward.ang_vel_xy", F(env.reward.ang_vel_xy)),
      dbl("reward.torque", F(env.reward.torque)),
      dbl("reward.accel", F(env.reward.accel)),
      dbl("reward.action_rate", F(env.reward.action_rate)),
      dbl("reward.tracking_sigma", F(env.reward.tracking_sigma)),
      dbl("obs.lin_vel", F(env.obs.lin_vel)),
      dbl("obs.ang_vel", F(env.obs.ang_vel)),
      dbl("obs.joint_pos", F(env.obs.joint_pos)),
      dbl("obs.joint_vel", F(env.obs.joint_vel)),
      dbl("obs.clip", F(env.obs.clip)),

      ints("net.hidden", F(hidden)),
      integer("net.plastic_layer", F(plastic_layer)),
      text("net.layout", F(layout)),
      dbl("net.lif_decay", F(lif_decay)),
      dbl("net.threshold", F(threshold)),
      dbl("net.surrogate_slope", F(surrogate_slope)),
      dbl("net.surrogate_width", F(surrogate_width)),
      dbl("net.readout_decay", F(readout_decay)),
      dbl("net.update_scale", F(update_scale)),
      dbl("net.rate_scale", F(rate_scale)),
      integer("net.window", F(window)),
      ints("net.value_hidden", F(value_hidden)),
      ints("net.adapter_hidden", F(adapter_hidden)),
      integer("net.latent_dim", F(latent_dim)),
      integer("net.history_len", F(history_len)),
      dbl("net.modulator_gain", F(modulator_gain)),

      dbl("rl.gamma", F(gamma)),
      dbl("rl.gae_lambda", F(gae_lambda)),

      integer("ppo.envs", F(ppo_envs)),
      integer("ppo.steps", F(ppo_steps)),
      integer("ppo.epochs", F(ppo.epochs)),
      integer("ppo.minibatches", F(ppo.minibatches)),
      dbl("ppo.clip", F(ppo.clip)),
      dbl("ppo.entropy", F(ppo.entropy_coef)),
      dbl("ppo.value_coef", F(ppo.value_coef)),
      dbl("ppo.max_grad_norm", F(ppo.max_grad_norm)),
      dbl("ppo.lr", F(ppo_lr)),
      dbl("ppo.lr_decay", F(ppo_lr_decay)),
      integer("pretrain.iters", F(pretrain_iters)),
      dbl("pretrain.threshold", F(pretrain_threshold)),
      integer("pretrain.eval_episodes", F(pretrain_eval_episodes)),

      integer("a2c.envs", F(a2c_envs)),
      integer("a2c.steps", F(a2c_steps)),
      dbl("a2c.entropy", F(a2c.entropy_coef)),
      dbl("a2c.value_coef", F(a2c.value_coef)),
      dbl("a2c.trace_penalty", F(a2c.trace_coef)),
      dbl("a2c.max_grad_norm", F(a2c.max_grad_norm)),
      dbl("a2c.lr", F(a2c_lr)),
      dbl("a2c.lr_decay", F(a2c_lr_decay)),
      dbl("a2c.encoder_lr", F(encoder_lr)),
      dbl("a2c.plastic_lr", F(plastic_lr)),
      dbl("a2c.plastic_lr_decay", F(plastic_lr_decay)),
      integer("phase1.iters", F(phase1_iters)),
      integer("rma.iters", F(rma_iters)),
      integer("roa.iters", F(roa_iters)),
      dbl("roa.lambda", F(roa_lambda)),
      integer("plastic.iters", F(plastic_iters)),

      integer("phase2.envs", F(phase2_envs)),
      integer("phase2.steps", F(phase2_steps)),
      integer("phase2.epochs", F(phase2_epochs)),
      integer("phase2.batch", F(phase2_batch)),
      dbl("phase2.lr", F(phase2_lr)),
      dbl("phase2.holdout", F(phase2_holdout)),

      integer("eval.seeds", F(eval_seeds)),
      integer("eval.episodes", F(eval_episodes)),
      integer("eval.grid", F(eval_grid)),
      integer("eval.episode_len", F(eval_episode_len)),
      dbl("eval.noise_max", F(eval_noise_max)),
  };
  return keys;
}

#undef F

const Key& find_key(const std::string& name) {
  for (const auto& k : registry()) {
    if (k.name == name) return k;
  }
  throw ContractError("config: unknown key '" + name + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

meta::SnnPolicyConfig Config::policy_config() const {
  meta::SnnPolicyConfig p;
  p.obs_dim = env::TestbedConfig::kObsDim;
  p.action_dim = env::TestbedConfig::kActionDim;
  p.hidden = hidden;
  p.lif.decay = lif_decay;
  p.lif.threshold = threshold;
  p.lif.surrogate_slope = surrogate_slope;
  p.lif.surrogate_width = surrogate_width;
  p.plastic_layer = plastic_layer;
  if (layout == "per_post") {
    p.layout = plasticity::ModulatorLayout::kPerPost;
  } else if (layout == "plus_per_pre") {
    p.layout = plasticity::ModulatorLayout::kPlusPerPre;
  } else {
    throw ContractError("config: net.layout must be per_post or plus_per_pre");
  }
  p.update_scale = update_scale;
  p.readout_decay = readout_decay;
  p.window = window;
  return p;
}

void Config::validate() const {
  require(profile == "desk" || profile == "paper", "config: run.profile must be desk or paper");
  require(!out.empty(), "config: run.out must not be empty");
  env.validate();
  auto pol = policy_config();
  pol.plasticity = meta::PlasticityMode::kModulated;
  pol.validate();
  require(gamma > 0.0 && gamma <= 1.0 && gae_lambda >= 0.0 && gae_lambda <= 1.0,
          "config: gamma / gae_lambda out of range");
  require(ppo_envs > 0 && ppo_steps > 0 && ppo_steps <= window,
          "config: ppo.steps must lie in [1, net.window]");
  require(ppo.minibatches >= 1 && ppo.minibatches <= ppo_envs,
          "config: ppo.minibatches must lie in [1, ppo.envs]");
  require(a2c_envs > 1, "config: a2c.envs must be at least 2");
  require(a2c_steps > 0 && a2c_steps <= window, "config: a2c.steps must lie in [1, net.window]");
  require(rate_scale >= 0.0 && modulator_gain >= 0.0, "config: negative scale");
  require(phase2_envs >= 4 && phase2_steps > 0 && phase2_epochs > 0 && phase2_batch > 0,
          "config: phase2 sizes must be positive");
  require(phase2_holdout > 0.0 && phase2_holdout < 1.0, "config: phase2.holdout in (0,1)");
  require(eval_seeds > 0 && eval_episodes > 0 && eval_grid >= 2 && eval_episode_len > 0,
          "config: eval sizes must be positive (grid >= 2)");
  for (int it : {pretrain_iters, phase1_iters, rma_iters, roa_iters, plastic_iters}) {
    require(it >= 0, "config: iteration counts must be non-negative");
  }
}

Config default_config(const std::string& profile) {
  Config c;
  if (profile == "desk") return c;
  require(profile == "paper", "unknown profile '" + profile + "' (desk | paper)");
  c.profile = "paper";
  c.out = "runs/paper";
  c.hidden = {512, 128, 64};
  c.ppo_envs = 10000;
  c.pretrain_iters = 2000;
  c.a2c_envs = 2048;
  c.phase1_iters = 5000;
  c.rma_iters = 5000;
  c.roa_iters = 5000;
  c.plastic_iters = 5000;
  c.encoder_lr = 3e-4;
  c.plastic_lr = 3e-4;
  c.modulator_gain = 1.0;
  return c;
}

void set_value(Config& cfg, const std::string& key, const std::string& value) {
  find_key(key).set(cfg, value);
}

std::string get_value(const Config& cfg, const std::string& key) {
  return find_key(key).get(cfg);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : registry()) n.push_back(k.name);
    return n;
  }();
  return names;
}

std::vector<std::pair<std::string, std::string>> to_pairs(const Config& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : registry()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

std::string to_text(const Config& cfg) {
  std::string s;
  for (const auto& [k, v] : to_pairs(cfg)) s += k + " = " + v + "\n";
  return s;
}

void apply_text(Config& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_value(cfg, key, value);
    } catch (const ContractError& e) {
      throw ContractError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::string env_var_name(const std::string& key) {
  std::string s = "SMA_";
  for (char c : key) s += c == '.' ? '_' : static_cast<char>(std::toupper(c));
  return s;
}

int apply_env_overrides(Config& cfg, char** envp) {
  if (envp == nullptr) return 0;
  int n = 0;
  for (const auto& key : config_keys()) {
    const std::string name = env_var_name(key) + "=";
    for (char** e = envp; *e != nullptr; ++e) {
      if (std::strncmp(*e, name.c_str(), name.size()) == 0) {
        set_value(cfg, key, trim(std::string(*e + name.size())));
        ++n;
      }
    }
  }
  return n;
}

Config load_config(const std::string& profile, const std::string& path, char** envp) {
  std::string text;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ContractError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  std::string chosen = profile;
  if (chosen.empty()) {
    // The file may name its own profile.
    Config probe;
    try {
      apply_text(probe, text, path);
      chosen = probe.profile;
    } catch (const ContractError&) {
      chosen = "desk";
    }
  }
  Config cfg = default_config(chosen);
  apply_text(cfg, text, path);
  if (cfg.profile != chosen) {
    throw ContractError("config file '" + path + "' is for profile '" + cfg.profile +
                        "', requested '" + chosen + "'");
  }
  apply_env_overrides(cfg, envp);
  cfg.validate();
  return cfg;
}

}  // namespace sma::harness
