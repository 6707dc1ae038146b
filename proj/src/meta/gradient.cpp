#include "sma/meta/gradient.hpp"

#include <algorithm>
#include <cmath>

namespace sma::meta {

double clip_global_norm(ParameterSet& grads, double max_norm) {
  require(max_norm > 0.0, "clip_global_norm: max_norm must be positive");
  const std::string bad = grads.first_non_finite();
  if (!bad.empty()) throw NumericError("non-finite gradient in leaf '" + bad + "'");
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

Vec clip_global_norm(const Vec& grads, double max_norm) {
  require(max_norm > 0.0, "clip_global_norm: max_norm must be positive");
  if (!grads.allFinite()) throw NumericError("non-finite gradient");
  const double norm = grads.norm();
  return norm > max_norm ? Vec(grads * (max_norm / norm)) : grads;
}

ParameterSet fd_oracle(const ParameterSet& params, const LossFn& loss,
                       const FdOptions& opts) {
  require(opts.h > 0.0, "fd_oracle: h must be positive");
  const double l0 = loss(params);
  const double l1 = loss(params);
  if (!(l0 == l1) && !(std::isnan(l0) && std::isnan(l1))) {
    throw NumericError("fd_oracle: forward pass is not deterministic");
  }
  ParameterSet out = params.zeros_like();
  ParameterSet probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.leaves()[i].name;
    if (!opts.leaves.empty() &&
        std::find(opts.leaves.begin(), opts.leaves.end(), name) == opts.leaves.end()) {
      continue;
    }
    Mat& value = probe.at(i);
    for (Eigen::Index j = 0; j < value.size(); ++j) {
      const double orig = value.data()[j];
      value.data()[j] = orig + opts.h;
      const double up = loss(probe);
      value.data()[j] = orig - opts.h;
      const double down = loss(probe);
      value.data()[j] = orig;
      out.at(i).data()[j] = (up - down) / (2.0 * opts.h);
    }
  }
  return out;
}

double fd_derivative(const std::function<double(double)>& f, double x, double h) {
  require(h > 0.0, "fd_derivative: h must be positive");
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace sma::meta
