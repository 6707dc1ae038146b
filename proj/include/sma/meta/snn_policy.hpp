#pragma once

#include <random>
#include <string>
#include <vector>

#include "sma/meta/parameter_set.hpp"
#include "sma/plasticity/plasticity.hpp"
#include "sma/snn/lif.hpp"

namespace sma::meta {

enum class PlasticityMode { kNone, kStdp, kModulated };

const char* to_string(PlasticityMode mode);
PlasticityMode plasticity_mode_from_string(const std::string& s);

struct SnnPolicyConfig {
  int obs_dim = 17;
  int context_dim = 0;  // extra input features appended to the observation
  std::vector<int> hidden{64, 32, 16};
  int action_dim = 2;
  snn::LayerConfig lif;  // n_in / n_out are ignored; sizes come from `hidden`

  PlasticityMode plasticity = PlasticityMode::kNone;
  int plastic_layer = 2;  // hidden layer whose incoming weights are plastic
  plasticity::ModulatorLayout layout = plasticity::ModulatorLayout::kPerPost;
  double trace_increment = 1.0;
  double update_scale = 1e-3;

  double readout_decay = std::exp(-1.0 / 10.0);
  // Zero spike pseudo-derivative: backward() is then the exact derivative of
  // the piecewise-smooth forward map (used for finite-difference checks).
  bool exact_gradient = false;
  int window = 30;  // maximum unroll length held by one tape

  int input_dim() const { return obs_dim + context_dim; }
  int layers() const { return static_cast<int>(hidden.size()); }
  int plastic_pre() const { return hidden.at(plastic_layer - 1); }
  int plastic_post() const { return hidden.at(plastic_layer); }
  int modulator_dim() const;
  bool plastic() const { return plasticity != PlasticityMode::kNone; }
  void validate() const;
};

// Recurrent and plastic state of B independent environments (columns).
struct PolicyState {
  std::vector<Mat> v;        // membrane potential per layer, n_k x B
  Mat readout;               // output-layer spike trace, n_last x B
  Mat x_pre;                 // plastic-layer traces, n_pre x B
  Mat x_post;                //                       n_post x B
  std::vector<Mat> offset;   // per env: W(t) - W(0) of the plastic layer
  std::vector<Mat> e_plus;   // per env eligibility traces
  std::vector<Mat> e_minus;
  std::vector<long> clock;   // per env stabilization step counter (>= 1)

  int batch() const { return static_cast<int>(clock.size()); }
  void reset_env(int b);
  PolicyState select(const std::vector<int>& envs) const;
  void assign(const std::vector<int>& envs, const PolicyState& sub);
};

struct StepInput {
  Mat obs;                  // obs_dim x B
  Mat context;              // context_dim x B, empty if unused
  Mat modulators;           // modulator_dim x B; empty means zero modulation
  std::vector<char> reset;  // per env: reinitialize state before the step
};

// Everything needed to replay one step and run its adjoint.
struct StepRecord {
  StepInput in;
  Mat input;  // [obs; context]
  std::vector<Mat> v_prev, v_pre, spikes;
  Mat readout;
  Mat x_pre_prev, x_post_prev, x_pre, x_post;
  std::vector<Mat> offset;  // plastic offset used by this step's forward pass
  std::vector<Mat> e_plus, e_minus;  // eligibilities after this step
  std::vector<double> gain;          // stabilization * update_scale per env
  Mat mean;
};

class UnrollTape {
 public:
  void begin(const PolicyState& start, int window);
  bool empty() const { return steps_.empty(); }
  std::size_t length() const { return steps_.size(); }
  int window() const { return window_; }
  const PolicyState& start() const { return start_; }
  const std::vector<StepRecord>& steps() const { return steps_; }
  StepRecord& push();

 private:
  PolicyState start_;
  std::vector<StepRecord> steps_;
  int window_ = 0;
};

// Loss gradients with respect to one step's outputs. Empty members are zero.
struct StepGrad {
  Mat mean;               // action_dim x B
  std::vector<Mat> v;     // per layer, post-reset potentials
  Mat x_pre, x_post;      // plastic-layer synaptic traces
};

struct InputGrads {
  std::vector<Mat> context;     // per step, context_dim x B
  std::vector<Mat> modulators;  // per step, modulator_dim x B
};

// LIF policy network: obs (+context) -> hidden LIF layers -> linear readout of
// the last layer's spike trace. One hidden layer may carry STDP or
// neuromodulated plasticity.
class SnnPolicy {
 public:
  SnnPolicy() = default;
  explicit SnnPolicy(SnnPolicyConfig cfg);

  const SnnPolicyConfig& config() const { return cfg_; }

  // Adds the static "pi.*" leaves.
  void init_params(ParameterSet& params, std::mt19937_64& rng) const;
  // Adds the plasticity leaves for the configured mode.
  void init_plasticity(ParameterSet& params, std::mt19937_64& rng,
                       double rate_scale = 1e-3) const;

  PolicyState initial_state(int batch) const;

  // Advances `state` by one step and returns the action means.
  Mat step(const ParameterSet& params, PolicyState& state, const StepInput& in,
           UnrollTape* tape = nullptr) const;

  std::vector<Mat> unroll_forward(const ParameterSet& params, PolicyState& state,
                                  const std::vector<StepInput>& inputs,
                                  UnrollTape* tape = nullptr) const;

  std::vector<Mat> replay(const ParameterSet& params, const UnrollTape& tape) const;

  // Reverse pass over the whole tape. Parameter gradients are accumulated
  // into `grads`; gradients with respect to context and modulator inputs are
  // returned per step. Adjoints entering the tape's start state are dropped.
  InputGrads backward(const ParameterSet& params, const UnrollTape& tape,
                      const std::vector<StepGrad>& step_grads,
                      ParameterSet& grads) const;

  std::string weight_name(int layer) const;
  std::string bias_name(int layer) const;

  static constexpr const char* kReadoutW = "pi.readout.w";
  static constexpr const char* kReadoutB = "pi.readout.b";
  static constexpr const char* kLogStd = "pi.log_std";
  static constexpr const char* kAPlus = "pi.plastic.a_plus";
  static constexpr const char* kAMinus = "pi.plastic.a_minus";
  static constexpr const char* kRate = "pi.plastic.rate";
  static constexpr const char* kTraceDecay = "pi.plastic.trace_decay";
  static constexpr const char* kEligDecay = "pi.plastic.elig_decay";

 private:
  void check_input(const StepInput& in, int batch) const;

  SnnPolicyConfig cfg_;
};

}  // namespace sma::meta
