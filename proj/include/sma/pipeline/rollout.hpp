#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sma/env/testbed.hpp"
#include "sma/pipeline/agent.hpp"
#include "sma/rl/buffer.hpp"

namespace sma::pipeline {

// Which adapter inputs a rollout has to record for the agent's current mode.
struct AdapterInputs {
  bool privileged = false;
  bool history = false;
};
AdapterInputs needed_inputs(const Agent& agent);

struct CollectStats {
  std::vector<double> episode_returns;  // episodes that finished during the rollout
  double mean_reward = 0.0;             // per step, over all envs
};

// Persistent on-policy collector: environments, recurrent/plastic policy state
// and history windows carry over between rollouts.
class Collector {
 public:
  // `reference` fixes the normalization of privileged extrinsics. With
  // `stagger`, env i starts its first episode i/n of the way through so that
  // episode boundaries are spread over time.
  Collector(const env::TestbedConfig& cfg, const env::ExtrinsicsRanges& reference, int n_envs,
            std::uint64_t seed, const AgentConfig& agent, bool stagger = true);

  // Fills `buf` with `n_steps` transitions under stochastic actions. `extra`
  // records adapter inputs the agent itself does not consume.
  CollectStats collect(const Agent& agent, const meta::ParameterSet& params, int n_steps,
                       rl::RolloutBuffer& buf, std::mt19937_64& rng, AdapterInputs extra = {});

  int size() const { return envs_.size(); }
  const env::VecEnv& envs() const { return envs_; }
  const meta::PolicyState& state() const { return state_; }

 private:
  env::ExtrinsicsRanges reference_;
  env::VecEnv envs_;
  meta::PolicyState state_;
  HistoryTracker history_;
  Mat obs_, prev_action_;
  std::vector<char> pending_reset_;
};

// One deterministic evaluation episode.
struct EpisodeSpec {
  env::Extrinsics ext;
  double noise_scale = 0.0;
};

struct EpisodeResult {
  double ret = 0.0;
  int length = 0;
  bool failed = false;
};

// Runs every episode in parallel under mean actions. All episodes share the
// env seed, so two agents evaluated with the same specs and seed see the same
// commands, initial states and sensor noise. `privileged_reads` receives the
// number of extrinsics reads made on behalf of the agent.
std::vector<EpisodeResult> run_episodes(const Agent& agent, const meta::ParameterSet& params,
                                        const env::TestbedConfig& cfg,
                                        const env::ExtrinsicsRanges& reference,
                                        const std::vector<EpisodeSpec>& specs,
                                        std::uint64_t seed, long* privileged_reads = nullptr);

// Episodes under randomized extrinsics from cfg.ranges (noise as configured);
// one score (mean return over `episodes`) per seed.
Vec paired_randomized_scores(const Agent& agent, const meta::ParameterSet& params,
                             const env::TestbedConfig& cfg,
                             const env::ExtrinsicsRanges& reference,
                             const std::vector<std::uint64_t>& seeds, int episodes,
                             long* privileged_reads = nullptr);

// One-sided exact sign test of "a > b": ties are dropped, p = P(X >= wins)
// with X ~ Binomial(wins + losses, 1/2). Returns 1 when every pair ties.
struct SignTest {
  int wins = 0, losses = 0, ties = 0;
  double p = 1.0;
};
SignTest sign_test(const Vec& a, const Vec& b);

// Records the per-step modulator (Sma) or latent (Rma) output of the active
// adapter for the first env of each spec, over `steps` steps.
std::vector<Mat> adapter_traces(const Agent& agent, const meta::ParameterSet& params,
                                const env::TestbedConfig& cfg,
                                const env::ExtrinsicsRanges& reference,
                                const std::vector<EpisodeSpec>& specs, int steps,
                                std::uint64_t seed);

// Plastic-layer offset W(t) - W(0) of a single episode after `steps` steps.
Mat plastic_offset_after(const Agent& agent, const meta::ParameterSet& params,
                         const env::TestbedConfig& cfg, const env::ExtrinsicsRanges& reference,
                         const EpisodeSpec& spec, int steps, std::uint64_t seed);

}  // namespace sma::pipeline
