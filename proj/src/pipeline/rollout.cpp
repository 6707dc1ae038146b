#include "sma/pipeline/rollout.hpp"

#include <algorithm>
#include <cmath>

#include "sma/rl/losses.hpp"

namespace sma::pipeline {

AdapterInputs needed_inputs(const Agent& agent) {
  AdapterInputs in;
  if (!agent.adaptive()) return in;
  in.privileged = agent.adapter() == Adapter::kExpert;
  in.history = agent.adapter() == Adapter::kEstimator ||
               (agent.config().roa && agent.adapter() == Adapter::kExpert);
  return in;
}

// ---- Collector ---------------------------------------------------------------

Collector::Collector(const env::TestbedConfig& cfg, const env::ExtrinsicsRanges& reference,
                     int n_envs, std::uint64_t seed, const AgentConfig& agent, bool stagger)
    : reference_(reference),
      envs_(cfg, n_envs, seed),
      state_(meta::SnnPolicy(agent.policy).initial_state(n_envs)),
      history_(agent.history_len, agent.policy.action_dim, agent.policy.obs_dim, n_envs),
      prev_action_(Mat::Zero(agent.policy.action_dim, n_envs)),
      pending_reset_(n_envs, 1) {
  obs_ = envs_.reset();
  if (stagger) {
    const long len = cfg.max_episode_len;
    for (int i = 0; i < n_envs; ++i) {
      envs_.at(i).set_episode_step(static_cast<int>(len * i / n_envs));
    }
  }
}

CollectStats Collector::collect(const Agent& agent, const meta::ParameterSet& params,
                                int n_steps, rl::RolloutBuffer& buf, std::mt19937_64& rng,
                                AdapterInputs extra) {
  require(agent.config().policy.obs_dim == obs_.rows() && state_.batch() == size(),
          "Collector::collect: agent does not match the collector");
  const int B = size();
  AdapterInputs need = needed_inputs(agent);
  need.privileged |= extra.privileged;
  need.history |= extra.history;
  const Vec log_std = params[meta::SnnPolicy::kLogStd].col(0);
  const Vec sigma = log_std.array().exp();
  std::normal_distribution<double> normal(0.0, 1.0);

  buf.init(n_steps, B);
  buf.initial_state = state_;
  CollectStats stats;
  double reward_sum = 0.0;

  for (int t = 0; t < n_steps; ++t) {
    for (int b = 0; b < B; ++b) {
      if (pending_reset_[b]) history_.reset(b);
    }
    history_.push(prev_action_, obs_);
    const Mat priv = need.privileged ? envs_.privileged(reference_) : Mat();
    const Mat hist = need.history ? history_.features() : Mat();

    const Mat mean = agent.step(params, state_, obs_, priv, hist, pending_reset_);
    if (!mean.allFinite()) throw NumericError("Collector::collect: non-finite action means");
    Mat action = mean;
    for (Eigen::Index c = 0; c < action.cols(); ++c) {
      for (Eigen::Index r = 0; r < action.rows(); ++r) action(r, c) += sigma(r) * normal(rng);
    }

    buf.obs[t] = obs_;
    if (need.privileged) buf.privileged[t] = priv;
    if (need.history) buf.history[t] = hist;
    buf.actions[t] = action;
    buf.reset[t] = pending_reset_;
    buf.log_probs.row(t) = rl::gaussian_log_prob(mean, log_std, action).transpose();
    buf.values.row(t) = agent.value(params, obs_);

    const env::VecStep res = envs_.step(action);
    buf.rewards.row(t) = res.reward.transpose();
    buf.done[t] = res.done;
    buf.timeout[t] = res.timeout;
    reward_sum += res.reward.sum();

    bool any_timeout = false;
    for (int b = 0; b < B; ++b) any_timeout |= res.timeout[b] != 0;
    if (any_timeout) {
      const Mat tv = agent.value(params, res.terminal_obs);
      for (int b = 0; b < B; ++b) {
        if (res.timeout[b]) buf.timeout_values(t, b) = tv(0, b);
      }
    }
    prev_action_ = action;
    for (int b = 0; b < B; ++b) {
      pending_reset_[b] = res.done[b];
      if (res.done[b]) {
        prev_action_.col(b).setZero();
        stats.episode_returns.push_back(res.episode_return(b));
      }
    }
    obs_ = res.obs;
    ++buf.written;
  }
  buf.bootstrap = agent.value(params, obs_).row(0).transpose();
  stats.mean_reward = reward_sum / (static_cast<double>(n_steps) * B);
  return stats;
}

// ---- Evaluation ----------------------------------------------------------------

namespace {

env::VecEnv make_eval_envs(const env::TestbedConfig& cfg, const std::vector<EpisodeSpec>& specs,
                           std::uint64_t seed) {
  require(!specs.empty(), "evaluation needs at least one episode");
  env::VecEnv envs(cfg, static_cast<int>(specs.size()), seed);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& c = envs.at(static_cast<int>(i)).mutable_config();
    c.ranges = env::ExtrinsicsRanges::fixed(specs[i].ext);
    c.noise.scale = specs[i].noise_scale;
  }
  return envs;
}

// Steps all episodes once to completion with mean actions; `on_step` sees the
// adapter output of every step.
template <typename OnStep>
std::vector<EpisodeResult> drive(const Agent& agent, const meta::ParameterSet& params,
                                 env::VecEnv& envs, const env::ExtrinsicsRanges& reference,
                                 int max_steps, OnStep on_step,
                                 meta::PolicyState* final_state = nullptr) {
  const int B = envs.size();
  const auto& pc = agent.config().policy;
  const AdapterInputs need = needed_inputs(agent);
  meta::PolicyState state = agent.policy().initial_state(B);
  HistoryTracker history(agent.config().history_len, pc.action_dim, pc.obs_dim, B);
  Mat obs = envs.reset();
  Mat prev = Mat::Zero(pc.action_dim, B);
  std::vector<char> reset(B, 1);
  std::vector<char> finished(B, 0);
  std::vector<EpisodeResult> out(B);
  int live = B;

  for (int t = 0; t < max_steps && live > 0; ++t) {
    history.push(prev, obs);
    const Mat priv = need.privileged ? envs.privileged(reference) : Mat();
    const Mat hist = need.history ? history.features() : Mat();
    on_step(t, priv, hist);
    const Mat action = agent.step(params, state, obs, priv, hist, reset);
    std::fill(reset.begin(), reset.end(), 0);
    const env::VecStep res = envs.step(action);
    for (int b = 0; b < B; ++b) {
      if (finished[b]) continue;
      out[b].ret += res.reward(b);
      ++out[b].length;
      if (res.done[b]) {
        finished[b] = 1;
        out[b].failed = !res.timeout[b];
        --live;
      }
    }
    prev = action;
    obs = res.obs;
  }
  if (final_state) *final_state = std::move(state);
  return out;
}

}  // namespace

std::vector<EpisodeResult> run_episodes(const Agent& agent, const meta::ParameterSet& params,
                                        const env::TestbedConfig& cfg,
                                        const env::ExtrinsicsRanges& reference,
                                        const std::vector<EpisodeSpec>& specs,
                                        std::uint64_t seed, long* privileged_reads) {
  env::VecEnv envs = make_eval_envs(cfg, specs, seed);
  const long before = envs.privileged_reads();
  auto out = drive(agent, params, envs, reference, cfg.max_episode_len,
                   [](int, const Mat&, const Mat&) {});
  if (privileged_reads) *privileged_reads += envs.privileged_reads() - before;
  return out;
}

Vec paired_randomized_scores(const Agent& agent, const meta::ParameterSet& params,
                             const env::TestbedConfig& cfg,
                             const env::ExtrinsicsRanges& reference,
                             const std::vector<std::uint64_t>& seeds, int episodes,
                             long* privileged_reads) {
  require(episodes > 0, "paired_randomized_scores: episodes must be positive");
  Vec scores(static_cast<Eigen::Index>(seeds.size()));
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    std::vector<EpisodeSpec> specs(episodes);
    std::mt19937_64 rng(seeds[s] ^ 0x9e3779b97f4a7c15ULL);
    for (auto& spec : specs) {
      spec.ext = env::sample_extrinsics(cfg.ranges, rng);
      spec.noise_scale = cfg.noise.scale;
    }
    const auto res = run_episodes(agent, params, cfg, reference, specs, seeds[s],
                                  privileged_reads);
    double sum = 0.0;
    for (const auto& r : res) sum += r.ret;
    scores(static_cast<Eigen::Index>(s)) = sum / episodes;
  }
  return scores;
}

SignTest sign_test(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "sign_test: paired samples differ in length");
  SignTest st;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) > b(i)) {
      ++st.wins;
    } else if (a(i) < b(i)) {
      ++st.losses;
    } else {
      ++st.ties;
    }
  }
  const int n = st.wins + st.losses;
  if (n == 0) return st;
  // P(X >= wins), summed in log space.
  double p = 0.0;
  for (int k = st.wins; k <= n; ++k) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                  n * std::log(2.0));
  }
  st.p = std::min(1.0, p);
  return st;
}

std::vector<Mat> adapter_traces(const Agent& agent, const meta::ParameterSet& params,
                                const env::TestbedConfig& cfg,
                                const env::ExtrinsicsRanges& reference,
                                const std::vector<EpisodeSpec>& specs, int steps,
                                std::uint64_t seed) {
  require(agent.adapter() == Adapter::kExpert || agent.adapter() == Adapter::kEstimator,
          "adapter_traces: agent has no active adapter");
  env::VecEnv envs = make_eval_envs(cfg, specs, seed);
  std::vector<Mat> traces(specs.size(), Mat::Zero(agent.config().encoder_out(), steps));
  drive(agent, params, envs, reference, steps, [&](int t, const Mat& priv, const Mat& hist) {
    const Mat out = agent.adapter_output(params, priv, hist);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      traces[i].col(t) = out.col(static_cast<Eigen::Index>(i));
    }
  });
  return traces;
}

Mat plastic_offset_after(const Agent& agent, const meta::ParameterSet& params,
                         const env::TestbedConfig& cfg, const env::ExtrinsicsRanges& reference,
                         const EpisodeSpec& spec, int steps, std::uint64_t seed) {
  require(agent.config().policy.plastic(), "plastic_offset_after: agent has no plastic layer");
  env::TestbedConfig c = cfg;
  c.max_episode_len = std::max(c.max_episode_len, steps);
  env::VecEnv envs = make_eval_envs(c, {spec}, seed);
  meta::PolicyState state;
  drive(agent, params, envs, reference, steps, [](int, const Mat&, const Mat&) {}, &state);
  return state.offset.at(0);
}

}  // namespace sma::pipeline
