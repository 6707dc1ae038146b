#include "sma/meta/mlp.hpp"

#include <cmath>

namespace sma::meta {
namespace {

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

}  // namespace

Mlp::Mlp(std::string prefix, MlpSpec spec)
    : prefix_(std::move(prefix)), spec_(std::move(spec)) {
  require(spec_.in > 0 && spec_.out > 0, "Mlp: empty input or output");
}

std::string Mlp::weight_name(int layer) const {
  return prefix_ + ".l" + std::to_string(layer) + ".w";
}

std::string Mlp::bias_name(int layer) const {
  return prefix_ + ".l" + std::to_string(layer) + ".b";
}

void Mlp::init(ParameterSet& params, std::mt19937_64& rng, const std::string& group,
               double head_scale) const {
  int fan_in = spec_.in;
  for (int k = 0; k < layers(); ++k) {
    const int fan_out = k + 1 < layers() ? spec_.hidden[k] : spec_.out;
    const double bound = std::sqrt(3.0 / fan_in) * (k + 1 < layers() ? 1.0 : head_scale);
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat w(fan_out, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    }
    params.add(weight_name(k), std::move(w), group);
    params.add(bias_name(k), Mat::Zero(fan_out, 1), group);
    fan_in = fan_out;
  }
}

Mat Mlp::forward(const ParameterSet& params, const Mat& x, Cache* cache) const {
  require(x.rows() == spec_.in, "Mlp " + prefix_ + ": input has " +
                                    std::to_string(x.rows()) + " rows, expected " +
                                    std::to_string(spec_.in));
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Mat h = x;
  for (int k = 0; k < layers(); ++k) {
    const Mat& w = params[weight_name(k)];
    const Mat& b = params[bias_name(k)];
    if (cache != nullptr) cache->inputs.push_back(h);
    Mat z = w * h;
    z.colwise() += b.col(0);
    if (k + 1 < layers()) {
      if (cache != nullptr) cache->pre.push_back(z);
      h = z.unaryExpr(&elu);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Mat Mlp::backward(const ParameterSet& params, const Cache& cache, const Mat& dy,
                  ParameterSet& grads) const {
  require(static_cast<int>(cache.inputs.size()) == layers(),
          "Mlp " + prefix_ + ": cache does not match a forward pass");
  Mat d = dy;
  for (int k = layers() - 1; k >= 0; --k) {
    const Mat& w = params[weight_name(k)];
    grads[weight_name(k)].noalias() += d * cache.inputs[k].transpose();
    grads[bias_name(k)].col(0) += d.rowwise().sum();
    Mat dh = w.transpose() * d;
    if (k > 0) {
      d = dh.array() * cache.pre[k - 1].unaryExpr(&elu_grad).array();
    } else {
      d = std::move(dh);
    }
  }
  return d;
}

}  // namespace sma::meta
