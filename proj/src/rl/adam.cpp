#include "sma/rl/adam.hpp"

#include <cmath>

namespace sma::rl {

Adam::Adam(const meta::ParameterSet& layout, AdamConfig cfg)
    : cfg_(cfg), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

void Adam::set_lr(const std::string& group, double lr) {
  require(lr >= 0.0 && std::isfinite(lr), "Adam: invalid learning rate for " + group);
  lr_[group] = lr;
}

double Adam::lr(const std::string& group) const {
  const auto it = lr_.find(group);
  return it == lr_.end() ? 0.0 : it->second;
}

void Adam::decay(const std::string& group, double factor) {
  const auto it = lr_.find(group);
  if (it != lr_.end()) it->second *= factor;
}

void Adam::step(meta::ParameterSet& params, const meta::ParameterSet& grads) {
  require(params.same_layout(m_) && grads.same_layout(m_), "Adam: layout mismatch");
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& group = params.leaves()[i].group;
    const auto it = lr_.find(group);
    if (it == lr_.end()) continue;
    const Mat& g = grads.at(i);
    Mat& m = m_.at(i);
    Mat& v = v_.at(i);
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params.at(i).array() -=
        it->second * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  }
}

}  // namespace sma::rl
