#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sma/meta/parameter_set.hpp"

namespace sma::meta {

// Scales `grads` in place so that its global L2 norm is at most `max_norm`.
// Returns the norm before clipping. A NaN/inf leaf raises NumericError naming
// the leaf.
double clip_global_norm(ParameterSet& grads, double max_norm);

Vec clip_global_norm(const Vec& grads, double max_norm);

using LossFn = std::function<double(const ParameterSet&)>;

struct FdOptions {
  double h = 1e-5;
  std::vector<std::string> leaves;  // empty: every leaf
};

// Central differences (L(p+h) - L(p-h)) / 2h for every scalar of the selected
// leaves. The loss is evaluated twice at `params` first; a bitwise mismatch
// means the forward pass is not deterministic and aborts with NumericError.
ParameterSet fd_oracle(const ParameterSet& params, const LossFn& loss,
                       const FdOptions& opts = {});

double fd_derivative(const std::function<double(double)>& f, double x, double h);

}  // namespace sma::meta
