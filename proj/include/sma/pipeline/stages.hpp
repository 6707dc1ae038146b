#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sma/harness/config.hpp"
#include "sma/pipeline/agent.hpp"

namespace sma::pipeline {

// Agent architecture plus its parameters.
struct Model {
  AgentConfig agent;
  meta::ParameterSet params;
};

// Ordered name/value pairs; one record per update.
using Record = std::vector<std::pair<std::string, double>>;

struct StageIo {
  std::function<void(const Record&)> metrics;
  // Called with the last finite parameters before a divergence is rethrown.
  std::function<void(const Model&)> on_abort;
  std::function<void(const std::string&)> log;

  void emit(const Record& r) const {
    if (metrics) metrics(r);
  }
  void say(const std::string& s) const {
    if (log) log(s);
  }
};

AgentConfig agent_config(const harness::Config& cfg, AgentKind kind, bool roa = false);

// Training dynamics: configured ranges and noise.
env::TestbedConfig train_env(const harness::Config& cfg);
// Phase-0 dynamics: nominal extrinsics, no sensor noise.
env::TestbedConfig nominal_env(const harness::Config& cfg);

// Deterministic stream for a named stage.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage);

struct PretrainReport {
  double eval_return = 0.0;  // mean over the seeded eval episodes
  double threshold = 0.0;
  bool reached = false;
};

Model pretrain_base(const harness::Config& cfg, const StageIo& io, PretrainReport* report);

// Meta-trains plasticity and the encoder on top of the base policy (A2C).
Model phase1_train(const harness::Config& cfg, const Model& base, const StageIo& io);

struct Phase2Report {
  double baseline_mse = 0.0;  // constant train-mean predictor on held-out data
  double holdout_mse = 0.0;
  double train_mse = 0.0;
  double target_variance = 0.0;  // held-out, per output averaged
  std::uint64_t checksum_before = 0, checksum_after = 0;  // frozen groups
  int train_samples = 0, holdout_samples = 0;
};

// Regresses the estimator onto the encoder's per-step outputs (modulators or
// latent) from histories collected with the encoder in the loop. Only the
// estimator group changes.
Model phase2_train_estimator(const harness::Config& cfg, const Model& trained,
                             const StageIo& io, Phase2Report* report);

// Latent-context baseline: A2C on (policy, encoder), then estimator regression.
Model rma_baseline_train(const harness::Config& cfg, const Model& base, const StageIo& io,
                         Phase2Report* report);

// Single-stage encoder/estimator training with the stop-gradient regularizers.
Model roa_joint_train(const harness::Config& cfg, const Model& base, const StageIo& io);

// Unmodulated STDP layer trained on top of the base policy.
Model plastic_train(const harness::Config& cfg, const Model& base, const StageIo& io);

// Groups that phase 2 must leave untouched.
std::vector<std::string> frozen_groups();

}  // namespace sma::pipeline
