#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "sma/meta/mlp.hpp"
#include "sma/meta/snn_policy.hpp"
#include "sma/rl/learner.hpp"

namespace sma::pipeline {

// Base: fixed-weight SNN. Plastic: unmodulated STDP layer. Sma: modulated
// layer driven by an encoder/estimator. Rma: static SNN with a latent
// context input produced by an encoder/estimator.
enum class AgentKind { kBase, kPlastic, kSma, kRma };

// Where the adaptation signal comes from at run time.
enum class Adapter { kNone, kExpert, kEstimator, kZeroed };

const char* to_string(AgentKind k);
AgentKind agent_kind_from_string(const std::string& s);
const char* to_string(Adapter a);

struct AgentConfig {
  AgentKind kind = AgentKind::kBase;
  meta::SnnPolicyConfig policy;
  std::vector<int> value_hidden{64, 64};
  std::vector<int> adapter_hidden{64, 64};  // encoder and estimator
  int extrinsics_dim = 5;
  int latent_dim = 8;
  int history_len = 10;
  double modulator_gain = 1.0;
  double rate_scale = 1e-3;  // initial plasticity rate magnitude
  double roa_lambda = 1.0;
  bool roa = false;  // add the stop-gradient regularizers during training

  int encoder_out() const;  // modulators (Sma), latent (Rma), else 0
  int history_dim() const;  // history_len * (action_dim + obs_dim)
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  static AgentConfig from_map(const std::map<std::string, std::string>& m);
};

AgentConfig make_agent_config(AgentKind kind, const meta::SnnPolicyConfig& base);

// Per-env sliding window of (previous action, observation) pairs, oldest
// first, zero-padded after a reset.
class HistoryTracker {
 public:
  HistoryTracker() = default;
  HistoryTracker(int len, int action_dim, int obs_dim, int batch);

  void reset(int b);
  void push(const Mat& prev_actions, const Mat& obs);
  Mat features() const;
  int dim() const { return len_ * pair_; }

 private:
  int len_ = 0, pair_ = 0;
  std::vector<Mat> window_;  // per env: pair x len, column len-1 is newest
};

class Agent : public rl::SequenceModel {
 public:
  static constexpr const char* kGroupPolicy = "policy";
  static constexpr const char* kGroupPlasticity = "plasticity";
  static constexpr const char* kGroupEncoder = "encoder";
  static constexpr const char* kGroupEstimator = "estimator";
  static constexpr const char* kGroupValue = "value";

  explicit Agent(AgentConfig cfg);

  const AgentConfig& config() const { return cfg_; }
  const meta::SnnPolicy& policy() const { return policy_; }
  const meta::Mlp& encoder() const { return encoder_; }
  const meta::Mlp& estimator() const { return estimator_; }
  const meta::Mlp& critic() const { return value_; }

  bool adaptive() const { return cfg_.encoder_out() > 0; }
  Adapter adapter() const { return adapter_; }
  void set_adapter(Adapter a);

  // Adds every leaf of this agent kind.
  void init(meta::ParameterSet& params, std::mt19937_64& rng) const;

  meta::PolicyState initial_state(int batch) const { return policy_.initial_state(batch); }

  // One collection/evaluation step: action means for all envs.
  Mat step(const meta::ParameterSet& params, meta::PolicyState& state, const Mat& obs,
           const Mat& privileged, const Mat& history, const std::vector<char>& reset) const;

  Mat value(const meta::ParameterSet& params, const Mat& obs) const;

  // Encoder (privileged) or estimator (history) output; adapter input must be
  // supplied for the selected path.
  Mat adapter_output(const meta::ParameterSet& params, const Mat& privileged,
                     const Mat& history) const;

  // Keeps meta-learned decay constants inside (1e-3, 1 - 1e-6).
  void clamp(meta::ParameterSet& params) const;

  // rl::SequenceModel
  std::string log_std_name() const override { return meta::SnnPolicy::kLogStd; }
  rl::SequenceOutputs forward(const meta::ParameterSet& params, const rl::RolloutBuffer& buf,
                              const std::vector<int>& envs) override;
  double backward(const meta::ParameterSet& params, const rl::SequenceGrads& g,
                  meta::ParameterSet& grads) override;

 private:
  // Converts the raw adapter output into the policy's context/modulator input.
  void route(const Mat& adapter_out, meta::StepInput& in) const;

  AgentConfig cfg_;
  meta::SnnPolicy policy_;
  meta::Mlp value_, encoder_, estimator_;
  Adapter adapter_ = Adapter::kNone;

  // State of the last forward().
  struct Pass {
    int steps = 0, batch = 0;
    meta::UnrollTape tape;
    meta::Mlp::Cache value_cache, adapter_cache, roa_cache;
    Mat adapter_out, roa_out;  // batched over steps
  } pass_;
};

// Copies every leaf of `src` that exists in `dst` with the same shape.
// Layer-0 policy weights with extra context columns receive the shared
// columns and keep zeros elsewhere. Returns the names that were copied.
std::vector<std::string> transfer_params(const meta::ParameterSet& src, meta::ParameterSet& dst);

}  // namespace sma::pipeline
