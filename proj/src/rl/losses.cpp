#include "sma/rl/losses.hpp"

#include <cmath>
#include <numbers>

namespace sma::rl {
namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void check_gaussian(const Mat& mean, const Vec& log_std, const Mat& action) {
  require(mean.rows() == log_std.size() && action.rows() == mean.rows() &&
              action.cols() == mean.cols(),
          "gaussian: mean " + shape_str(mean) + ", action " + shape_str(action) +
              ", log_std " + std::to_string(log_std.size()));
}

}  // namespace

Vec gaussian_log_prob(const Mat& mean, const Vec& log_std, const Mat& action) {
  check_gaussian(mean, log_std, action);
  const Vec inv_std = (-log_std.array()).exp();
  Vec out(mean.cols());
  for (Eigen::Index c = 0; c < mean.cols(); ++c) {
    const Vec z = (action.col(c) - mean.col(c)).cwiseProduct(inv_std);
    out(c) = -0.5 * z.squaredNorm() - log_std.sum() -
             kHalfLog2Pi * static_cast<double>(mean.rows());
  }
  return out;
}

Mat gaussian_dlogp_dmean(const Mat& mean, const Vec& log_std, const Mat& action) {
  check_gaussian(mean, log_std, action);
  const Vec inv_var = (-2.0 * log_std.array()).exp();
  return (action - mean).array().colwise() * inv_var.array();
}

Mat gaussian_dlogp_dlogstd(const Mat& mean, const Vec& log_std, const Mat& action) {
  check_gaussian(mean, log_std, action);
  const Vec inv_std = (-log_std.array()).exp();
  const Mat z = (action - mean).array().colwise() * inv_std.array();
  return z.array().square() - 1.0;
}

double gaussian_entropy(const Vec& log_std) {
  return log_std.sum() + (0.5 + kHalfLog2Pi) * static_cast<double>(log_std.size());
}

SurrogateTerm ppo_surrogate(double logp_new, double logp_old, double advantage,
                            double clip) {
  require(clip > 0.0, "ppo_surrogate: clip must be positive");
  const double ratio = std::exp(logp_new - logp_old);
  const double clipped_ratio = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  const double unclipped = ratio * advantage;
  const double clipped = clipped_ratio * advantage;
  SurrogateTerm out;
  if (clipped < unclipped) {
    out.loss = -clipped;
    out.clipped = true;
  } else {
    out.loss = -unclipped;
    out.dloss_dlogp = -unclipped;
  }
  return out;
}

double trace_penalty(const std::vector<Mat>& traces, double coef, std::vector<Mat>* grads) {
  double n = 0.0, sum = 0.0;
  for (const auto& m : traces) {
    n += static_cast<double>(m.size());
    sum += m.squaredNorm();
  }
  if (grads != nullptr) grads->clear();
  if (n == 0.0) return 0.0;
  if (grads != nullptr) {
    for (const auto& m : traces) grads->push_back((2.0 * coef / n) * m);
  }
  return coef * sum / n;
}

}  // namespace sma::rl
