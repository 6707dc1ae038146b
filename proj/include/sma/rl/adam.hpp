#pragma once

#include <map>
#include <string>

#include "sma/meta/parameter_set.hpp"

namespace sma::rl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with one learning rate per parameter group. Leaves whose group has no
// learning rate are left untouched.
class Adam {
 public:
  Adam() = default;
  Adam(const meta::ParameterSet& layout, AdamConfig cfg = {});

  void set_lr(const std::string& group, double lr);
  double lr(const std::string& group) const;
  bool trains(const std::string& group) const { return lr_.count(group) > 0; }
  void decay(const std::string& group, double factor);
  const std::map<std::string, double>& rates() const { return lr_; }

  void step(meta::ParameterSet& params, const meta::ParameterSet& grads);
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, double> lr_;
  meta::ParameterSet m_, v_;
  long t_ = 0;
};

}  // namespace sma::rl
