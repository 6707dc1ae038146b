#pragma once

#include <vector>

#include "sma/common.hpp"

namespace sma::rl {

// Diagonal Gaussian with state-independent log standard deviation.
// Columns of `mean` and `action` are samples.
Vec gaussian_log_prob(const Mat& mean, const Vec& log_std, const Mat& action);
// d log p / d mean, same shape as mean.
Mat gaussian_dlogp_dmean(const Mat& mean, const Vec& log_std, const Mat& action);
// d log p / d log_std, one column per sample.
Mat gaussian_dlogp_dlogstd(const Mat& mean, const Vec& log_std, const Mat& action);
double gaussian_entropy(const Vec& log_std);

struct SurrogateTerm {
  double loss = 0.0;         // -min(r A, clip(r) A)
  double dloss_dlogp = 0.0;  // derivative with respect to the new log-prob
  bool clipped = false;      // the clipped branch is active (zero gradient)
};

SurrogateTerm ppo_surrogate(double logp_new, double logp_old, double advantage,
                            double clip);

// coef * mean(x^2) over every entry of every matrix; grads has the same
// shapes (empty input gives 0 and empty grads).
double trace_penalty(const std::vector<Mat>& traces, double coef,
                     std::vector<Mat>* grads);

}  // namespace sma::rl
