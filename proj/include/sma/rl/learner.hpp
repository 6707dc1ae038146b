#pragma once

#include <random>
#include <string>
#include <vector>

#include "sma/rl/adam.hpp"
#include "sma/rl/buffer.hpp"

namespace sma::rl {

struct SequenceOutputs {
  std::vector<Mat> mean;    // per step, action_dim x |envs|
  std::vector<Mat> value;   // per step, 1 x |envs|
  std::vector<Mat> traces;  // per step, plastic synaptic traces; empty if none
};

struct SequenceGrads {
  std::vector<Mat> mean;
  std::vector<Mat> value;
  std::vector<Mat> traces;  // empty: no trace loss
};

// Actor-critic whose outputs over a rollout must be recomputed by
// re-unrolling from the buffer's stored initial state.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual std::string log_std_name() const = 0;

  // Re-unrolls all buffer steps for the given envs.
  virtual SequenceOutputs forward(const meta::ParameterSet& params, const RolloutBuffer& buf,
                                  const std::vector<int>& envs) = 0;

  // Backward pass of the most recent forward(). Accumulates into `grads` and
  // returns any model-specific loss it added (e.g. regularizers).
  virtual double backward(const meta::ParameterSet& params, const SequenceGrads& g,
                          meta::ParameterSet& grads) = 0;
};

struct PpoConfig {
  int epochs = 5;
  int minibatches = 4;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 1.0;
  double max_grad_norm = 1.0;
};

struct A2cConfig {
  double entropy_coef = 0.005;
  double value_coef = 1.0;
  double trace_coef = 1e-2;
  double max_grad_norm = 1.0;
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double trace_penalty = 0.0;
  double aux_loss = 0.0;
  double grad_norm = 0.0;        // actor side, before clipping
  double value_grad_norm = 0.0;  // critic, before clipping
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  int gradient_steps = 0;
};

// Name of the group whose gradient norm is clipped separately from the rest.
inline constexpr const char* kValueGroup = "value";

// Clips the critic leaves and the remaining leaves to `max_norm` each.
// Returns {actor norm, critic norm} before clipping.
std::pair<double, double> clip_actor_critic(meta::ParameterSet& grads, double max_norm);

UpdateStats ppo_update(SequenceModel& model, meta::ParameterSet& params, Adam& opt,
                       const RolloutBuffer& buf, const GaeResult& gae, const PpoConfig& cfg,
                       std::mt19937_64& rng);

// One gradient step over the whole buffer (one truncation window).
UpdateStats a2c_update(SequenceModel& model, meta::ParameterSet& params, Adam& opt,
                       const RolloutBuffer& buf, const GaeResult& gae, const A2cConfig& cfg);

}  // namespace sma::rl
