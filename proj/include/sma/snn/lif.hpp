#pragma once

#include <cmath>

#include "sma/common.hpp"

namespace sma::snn {

// Leaky integrate-and-fire layer parameters. One policy step is one Euler
// step of the membrane equation.
struct LayerConfig {
  int n_in = 0;
  int n_out = 0;
  double decay = std::exp(-1.0 / 10.0);  // membrane multiplier per step
  double threshold = 1.0;
  double surrogate_slope = 0.3;  // peak of the pseudo-derivative
  double surrogate_width = 1.0;  // half-support of the pseudo-derivative

  void validate() const;
};

struct NeuronState {
  Vec v;  // membrane potential, threshold units
  Vec s;  // spikes of the last step, exactly 0 or 1

  static NeuronState zeros(int n);
};

// v_pre = decay * v + current; s = [v_pre >= threshold]; v' = v_pre - threshold * s.
NeuronState lif_step(const NeuronState& state, const Vec& current,
                     const LayerConfig& cfg);

// Triangle pseudo-derivative of the spike nonlinearity, evaluated at the
// pre-reset potential.
double surrogate_grad(double v_pre_spike, const LayerConfig& cfg);

// lif_step(state, w * spikes_in, cfg).
NeuronState forward_layer(const Vec& spikes_in, const Mat& w,
                          const NeuronState& state, const LayerConfig& cfg);

// Batched in-place kernel shared by lif_step and the policy network: columns
// of `v`, `s`, `current` are independent neurons groups. `v_pre` receives the
// pre-reset potentials when non-null.
void lif_advance(Eigen::Ref<Mat> v, Eigen::Ref<Mat> s, const Mat& current,
                 const LayerConfig& cfg, Mat* v_pre = nullptr);

}  // namespace sma::snn
