#include "sma/pipeline/stages.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "sma/pipeline/rollout.hpp"
#include "sma/rl/buffer.hpp"

namespace sma::pipeline {
namespace {

struct LrPlan {
  std::string group;
  double lr;
  double decay;
};

double mean_or_nan(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Record update_record(int iter, const CollectStats& cs, const rl::UpdateStats& st,
                     const meta::ParameterSet& params, const rl::Adam& opt) {
  return {
      {"iter", iter},
      {"mean_reward", cs.mean_reward},
      {"episode_return", mean_or_nan(cs.episode_returns)},
      {"episodes", static_cast<double>(cs.episode_returns.size())},
      {"policy_loss", st.policy_loss},
      {"value_loss", st.value_loss},
      {"entropy", st.entropy},
      {"trace_penalty", st.trace_penalty},
      {"aux_loss", st.aux_loss},
      {"grad_norm", st.grad_norm},
      {"value_grad_norm", st.value_grad_norm},
      {"approx_kl", st.approx_kl},
      {"clip_fraction", st.clip_fraction},
      {"log_std", params[meta::SnnPolicy::kLogStd].mean()},
      {"lr_policy", opt.trains(Agent::kGroupPolicy) ? opt.lr(Agent::kGroupPolicy) : 0.0},
  };
}

// Shared on-policy loop. `ppo` selects the pre-training learner, otherwise
// one A2C step per truncation window.
Model train_loop(const harness::Config& cfg, Agent& agent, Model model,
                 const env::TestbedConfig& env_cfg, const std::vector<LrPlan>& plan, int iters,
                 bool ppo, const std::string& stage, const StageIo& io) {
  const int n_envs = ppo ? cfg.ppo_envs : cfg.a2c_envs;
  const int steps = ppo ? cfg.ppo_steps : cfg.a2c_steps;
  Collector col(env_cfg, cfg.env.ranges, n_envs, stage_seed(cfg.seed, stage + ".env"),
                model.agent);
  std::mt19937_64 rng(stage_seed(cfg.seed, stage + ".act"));
  rl::Adam opt(model.params);
  for (const auto& p : plan) opt.set_lr(p.group, p.lr);

  rl::RolloutBuffer buf;
  Model last_good = model;
  for (int it = 0; it < iters; ++it) {
    rl::UpdateStats st;
    CollectStats cs;
    try {
      cs = col.collect(agent, model.params, steps, buf, rng);
      const rl::GaeResult gae = rl::compute_gae(buf, cfg.gamma, cfg.gae_lambda);
      st = ppo ? rl::ppo_update(agent, model.params, opt, buf, gae, cfg.ppo, rng)
               : rl::a2c_update(agent, model.params, opt, buf, gae, cfg.a2c);
      const std::string bad = model.params.first_non_finite();
      if (!bad.empty()) throw NumericError(stage + ": parameter '" + bad + "' diverged");
    } catch (const NumericError& e) {
      io.say(stage + ": aborting at update " + std::to_string(it) + ": " + e.what());
      if (io.on_abort) io.on_abort(last_good);
      throw;
    }
    agent.clamp(model.params);
    for (const auto& p : plan) opt.decay(p.group, p.decay);
    io.emit(update_record(it, cs, st, model.params, opt));
    last_good.params = model.params;
  }
  return model;
}

Model fresh_model(const harness::Config& cfg, AgentKind kind, bool roa, const std::string& stage) {
  Model m;
  m.agent = agent_config(cfg, kind, roa);
  std::mt19937_64 rng(stage_seed(cfg.seed, stage + ".init"));
  Agent(m.agent).init(m.params, rng);
  return m;
}

Model from_base(const harness::Config& cfg, const Model& base, AgentKind kind, bool roa,
                const std::string& stage) {
  require(base.agent.kind == AgentKind::kBase, stage + ": expects a pre-trained base model");
  Model m = fresh_model(cfg, kind, roa, stage);
  transfer_params(base.params, m.params);
  return m;
}

}  // namespace

AgentConfig agent_config(const harness::Config& cfg, AgentKind kind, bool roa) {
  AgentConfig a = make_agent_config(kind, cfg.policy_config());
  a.value_hidden = cfg.value_hidden;
  a.adapter_hidden = cfg.adapter_hidden;
  a.latent_dim = cfg.latent_dim;
  a.history_len = cfg.history_len;
  a.modulator_gain = cfg.modulator_gain;
  a.rate_scale = cfg.rate_scale;
  a.roa_lambda = cfg.roa_lambda;
  a.roa = roa;
  if (kind == AgentKind::kRma) a.policy.context_dim = a.latent_dim;
  a.validate();
  return a;
}

env::TestbedConfig train_env(const harness::Config& cfg) { return cfg.env; }

env::TestbedConfig nominal_env(const harness::Config& cfg) {
  env::TestbedConfig e = cfg.env;
  e.ranges = env::ExtrinsicsRanges::fixed(env::Extrinsics{});
  e.noise.scale = 0.0;
  return e;
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : stage) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{seed, h};
  std::array<std::uint64_t, 1> out{};
  seq.generate(out.begin(), out.end());
  return out[0];
}

std::vector<std::string> frozen_groups() {
  return {Agent::kGroupPolicy, Agent::kGroupPlasticity, Agent::kGroupEncoder,
          Agent::kGroupValue};
}

Model pretrain_base(const harness::Config& cfg, const StageIo& io, PretrainReport* report) {
  Model m = fresh_model(cfg, AgentKind::kBase, false, "pretrain");
  Agent agent(m.agent);
  const env::TestbedConfig env_cfg = nominal_env(cfg);
  m = train_loop(cfg, agent, std::move(m), env_cfg,
                 {{Agent::kGroupPolicy, cfg.ppo_lr, cfg.ppo_lr_decay},
                  {Agent::kGroupValue, cfg.ppo_lr, cfg.ppo_lr_decay}},
                 cfg.pretrain_iters, true, "pretrain", io);

  std::vector<EpisodeSpec> specs(cfg.pretrain_eval_episodes, EpisodeSpec{env::Extrinsics{}, 0.0});
  const auto res = run_episodes(agent, m.params, env_cfg, cfg.env.ranges, specs,
                                stage_seed(cfg.seed, "pretrain.eval"));
  PretrainReport r;
  for (const auto& e : res) r.eval_return += e.ret / static_cast<double>(res.size());
  r.threshold = cfg.pretrain_threshold;
  r.reached = r.eval_return >= r.threshold;
  io.say("pretrain: eval return " + std::to_string(r.eval_return) + " (threshold " +
         std::to_string(r.threshold) + (r.reached ? ", reached)" : ", NOT reached)"));
  if (report) *report = r;
  return m;
}

Model phase1_train(const harness::Config& cfg, const Model& base, const StageIo& io) {
  Model m = from_base(cfg, base, AgentKind::kSma, false, "phase1");
  Agent agent(m.agent);
  agent.set_adapter(Adapter::kExpert);
  return train_loop(cfg, agent, std::move(m), train_env(cfg),
                    {{Agent::kGroupPolicy, cfg.a2c_lr, cfg.a2c_lr_decay},
                     {Agent::kGroupPlasticity, cfg.plastic_lr, cfg.plastic_lr_decay},
                     {Agent::kGroupEncoder, cfg.encoder_lr, cfg.a2c_lr_decay},
                     {Agent::kGroupValue, cfg.a2c_lr, cfg.a2c_lr_decay}},
                    cfg.phase1_iters, false, "phase1", io);
}

Model phase2_train_estimator(const harness::Config& cfg, const Model& trained,
                             const StageIo& io, Phase2Report* report) {
  Model m = trained;
  Agent agent(m.agent);
  require(agent.adaptive(), "phase2: model has no encoder to imitate");
  agent.set_adapter(Adapter::kExpert);
  const std::string stage = std::string("phase2.") + to_string(m.agent.kind);
  Phase2Report rep;
  rep.checksum_before = m.params.checksum(frozen_groups());

  // Rollouts with the encoder in the loop; targets are its raw outputs.
  Collector col(train_env(cfg), cfg.env.ranges, cfg.phase2_envs,
                stage_seed(cfg.seed, stage + ".env"), m.agent);
  std::mt19937_64 rng(stage_seed(cfg.seed, stage + ".act"));
  rl::RolloutBuffer buf;
  col.collect(agent, m.params, cfg.phase2_steps, buf, rng, AdapterInputs{true, true});

  const int B = cfg.phase2_envs;
  const int T = cfg.phase2_steps;
  const int n_train_envs =
      std::clamp(static_cast<int>(std::lround((1.0 - cfg.phase2_holdout) * B)), 1, B - 1);
  const auto& est = agent.estimator();
  const auto& enc = agent.encoder();
  const int in_dim = m.agent.history_dim();
  const int out_dim = m.agent.encoder_out();
  Mat x_train(in_dim, static_cast<Eigen::Index>(T) * n_train_envs);
  Mat y_train(out_dim, x_train.cols());
  Mat x_hold(in_dim, static_cast<Eigen::Index>(T) * (B - n_train_envs));
  Mat y_hold(out_dim, x_hold.cols());
  for (int t = 0; t < T; ++t) {
    const Mat target = enc.forward(m.params, buf.privileged[t]);
    for (int b = 0; b < B; ++b) {
      if (b < n_train_envs) {
        const Eigen::Index c = static_cast<Eigen::Index>(t) * n_train_envs + b;
        x_train.col(c) = buf.history[t].col(b);
        y_train.col(c) = target.col(b);
      } else {
        const Eigen::Index c = static_cast<Eigen::Index>(t) * (B - n_train_envs) + b - n_train_envs;
        x_hold.col(c) = buf.history[t].col(b);
        y_hold.col(c) = target.col(b);
      }
    }
  }
  rep.train_samples = static_cast<int>(x_train.cols());
  rep.holdout_samples = static_cast<int>(x_hold.cols());

  const Vec train_mean = y_train.rowwise().mean();
  auto mse = [](const Mat& pred, const Mat& target) {
    return (pred - target).squaredNorm() / static_cast<double>(target.size());
  };
  rep.baseline_mse = mse(train_mean.replicate(1, y_hold.cols()), y_hold);
  const Vec hold_mean = y_hold.rowwise().mean();
  rep.target_variance = mse(hold_mean.replicate(1, y_hold.cols()), y_hold);

  rl::Adam opt(m.params);
  opt.set_lr(Agent::kGroupEstimator, cfg.phase2_lr);
  std::vector<int> order(x_train.cols());
  std::iota(order.begin(), order.end(), 0);
  const int bs = std::min<int>(cfg.phase2_batch, static_cast<int>(order.size()));
  for (int epoch = 0; epoch < cfg.phase2_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + bs <= order.size(); start += bs) {
      Mat xb(in_dim, bs), yb(out_dim, bs);
      for (int i = 0; i < bs; ++i) {
        xb.col(i) = x_train.col(order[start + i]);
        yb.col(i) = y_train.col(order[start + i]);
      }
      meta::Mlp::Cache cache;
      const Mat pred = est.forward(m.params, xb, &cache);
      const Mat d = (2.0 / static_cast<double>(yb.size())) * (pred - yb);
      meta::ParameterSet grads = m.params.zeros_like();
      est.backward(m.params, cache, d, grads);
      const std::string bad = grads.first_non_finite();
      if (!bad.empty()) throw NumericError(stage + ": non-finite gradient in '" + bad + "'");
      opt.step(m.params, grads);
    }
    rep.train_mse = mse(est.forward(m.params, x_train), y_train);
    rep.holdout_mse = mse(est.forward(m.params, x_hold), y_hold);
    io.emit({{"epoch", epoch},
             {"train_mse", rep.train_mse},
             {"holdout_mse", rep.holdout_mse},
             {"baseline_mse", rep.baseline_mse}});
  }
  rep.checksum_after = m.params.checksum(frozen_groups());
  require(rep.checksum_before == rep.checksum_after, "phase2: frozen parameters changed");
  io.say(stage + ": held-out MSE " + std::to_string(rep.holdout_mse) + " vs constant " +
         std::to_string(rep.baseline_mse));
  if (report) *report = rep;
  return m;
}

Model rma_baseline_train(const harness::Config& cfg, const Model& base, const StageIo& io,
                         Phase2Report* report) {
  Model m = from_base(cfg, base, AgentKind::kRma, false, "rma");
  Agent agent(m.agent);
  agent.set_adapter(Adapter::kExpert);
  m = train_loop(cfg, agent, std::move(m), train_env(cfg),
                 {{Agent::kGroupPolicy, cfg.a2c_lr, cfg.a2c_lr_decay},
                  {Agent::kGroupEncoder, cfg.encoder_lr, cfg.a2c_lr_decay},
                  {Agent::kGroupValue, cfg.a2c_lr, cfg.a2c_lr_decay}},
                 cfg.rma_iters, false, "rma", io);
  return phase2_train_estimator(cfg, m, io, report);
}

Model roa_joint_train(const harness::Config& cfg, const Model& base, const StageIo& io) {
  Model m = from_base(cfg, base, AgentKind::kRma, true, "roa");
  Agent agent(m.agent);
  agent.set_adapter(Adapter::kExpert);
  return train_loop(cfg, agent, std::move(m), train_env(cfg),
                    {{Agent::kGroupPolicy, cfg.a2c_lr, cfg.a2c_lr_decay},
                     {Agent::kGroupEncoder, cfg.encoder_lr, cfg.a2c_lr_decay},
                     {Agent::kGroupEstimator, cfg.encoder_lr, cfg.a2c_lr_decay},
                     {Agent::kGroupValue, cfg.a2c_lr, cfg.a2c_lr_decay}},
                    cfg.roa_iters, false, "roa", io);
}

Model plastic_train(const harness::Config& cfg, const Model& base, const StageIo& io) {
  Model m = from_base(cfg, base, AgentKind::kPlastic, false, "plastic");
  Agent agent(m.agent);
  return train_loop(cfg, agent, std::move(m), train_env(cfg),
                    {{Agent::kGroupPolicy, cfg.a2c_lr, cfg.a2c_lr_decay},
                     {Agent::kGroupPlasticity, cfg.plastic_lr, cfg.plastic_lr_decay},
                     {Agent::kGroupValue, cfg.a2c_lr, cfg.a2c_lr_decay}},
                    cfg.plastic_iters, false, "plastic", io);
}

}  // namespace sma::pipeline
