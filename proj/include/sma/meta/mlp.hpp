#pragma once

#include <random>
#include <string>
#include <vector>

#include "sma/meta/parameter_set.hpp"

namespace sma::meta {

struct MlpSpec {
  int in = 0;
  std::vector<int> hidden;
  int out = 0;
};

// Feedforward ELU network with a linear head. Columns of the input matrix are
// samples. Leaves are named "<prefix>.l<k>.w" and "<prefix>.l<k>.b".
class Mlp {
 public:
  struct Cache {
    std::vector<Mat> inputs;  // input of every layer
    std::vector<Mat> pre;     // pre-activation of every hidden layer
  };

  Mlp() = default;
  Mlp(std::string prefix, MlpSpec spec);

  const std::string& prefix() const { return prefix_; }
  const MlpSpec& spec() const { return spec_; }
  int layers() const { return static_cast<int>(spec_.hidden.size()) + 1; }

  // Uniform fan-in init; the head is additionally scaled by `head_scale`.
  void init(ParameterSet& params, std::mt19937_64& rng, const std::string& group,
            double head_scale = 1.0) const;

  Mat forward(const ParameterSet& params, const Mat& x, Cache* cache = nullptr) const;

  // Accumulates parameter gradients into `grads`; returns d loss / d x.
  Mat backward(const ParameterSet& params, const Cache& cache, const Mat& dy,
               ParameterSet& grads) const;

  std::string weight_name(int layer) const;
  std::string bias_name(int layer) const;

 private:
  std::string prefix_;
  MlpSpec spec_;
};

}  // namespace sma::meta
