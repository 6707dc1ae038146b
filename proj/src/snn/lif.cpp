#include "sma/snn/lif.hpp"

#include <algorithm>

namespace sma::snn {

void LayerConfig::validate() const {
  require(n_in >= 0 && n_out >= 0, "LayerConfig: negative layer size");
  require(decay > 0.0 && decay < 1.0, "LayerConfig: decay must lie in (0,1)");
  require(threshold > 0.0, "LayerConfig: threshold must be positive");
  require(surrogate_slope >= 0.0, "LayerConfig: surrogate slope must be >= 0");
  require(surrogate_width > 0.0, "LayerConfig: surrogate width must be > 0");
}

NeuronState NeuronState::zeros(int n) {
  return {Vec::Zero(n), Vec::Zero(n)};
}

void lif_advance(Eigen::Ref<Mat> v, Eigen::Ref<Mat> s, const Mat& current,
                 const LayerConfig& cfg, Mat* v_pre) {
  require(v.rows() == current.rows() && v.cols() == current.cols(),
          "lif_advance: current is " + shape_str(current) + ", state is " +
              std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
  if (!current.allFinite()) {
    throw NumericError("lif_advance: non-finite input current");
  }
  if (v_pre != nullptr) v_pre->resize(v.rows(), v.cols());
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      const double u = cfg.decay * v(r, c) + current(r, c);
      const double spike = u >= cfg.threshold ? 1.0 : 0.0;
      if (v_pre != nullptr) (*v_pre)(r, c) = u;
      s(r, c) = spike;
      v(r, c) = u - cfg.threshold * spike;
    }
  }
}

NeuronState lif_step(const NeuronState& state, const Vec& current,
                     const LayerConfig& cfg) {
  require(current.size() == cfg.n_out,
          "lif_step: current has length " + std::to_string(current.size()) +
              ", layer has " + std::to_string(cfg.n_out) + " neurons");
  require(state.v.size() == cfg.n_out, "lif_step: state size mismatch");
  if (!state.v.allFinite()) throw NumericError("lif_step: non-finite potential");
  NeuronState next = state;
  next.s.resize(cfg.n_out);
  lif_advance(next.v, next.s, current, cfg);
  return next;
}

double surrogate_grad(double v_pre_spike, const LayerConfig& cfg) {
  const double dist = std::abs(v_pre_spike - cfg.threshold) / cfg.surrogate_width;
  return std::max(0.0, cfg.surrogate_slope * (1.0 - dist));
}

NeuronState forward_layer(const Vec& spikes_in, const Mat& w,
                          const NeuronState& state, const LayerConfig& cfg) {
  require(w.rows() == cfg.n_out && w.cols() == spikes_in.size(),
          "forward_layer: weight " + shape_str(w) + " vs input length " +
              std::to_string(spikes_in.size()));
  return lif_step(state, w * spikes_in, cfg);
}

}  // namespace sma::snn
