#include "sma/rl/buffer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sma::rl {

void RolloutBuffer::init(int steps, int envs) {
  require(steps > 0 && envs > 0, "RolloutBuffer: empty shape");
  n_steps = steps;
  n_envs = envs;
  obs.assign(steps, Mat());
  privileged.assign(steps, Mat());
  history.assign(steps, Mat());
  actions.assign(steps, Mat());
  reset.assign(steps, std::vector<char>(envs, 0));
  done.assign(steps, std::vector<char>(envs, 0));
  timeout.assign(steps, std::vector<char>(envs, 0));
  log_probs = Mat::Zero(steps, envs);
  values = Mat::Zero(steps, envs);
  rewards = Mat::Zero(steps, envs);
  timeout_values = Mat::Zero(steps, envs);
  bootstrap.resize(0);
  written = 0;
}

void RolloutBuffer::require_complete(const char* who) const {
  if (!complete()) {
    throw ContractError(std::string(who) + ": rollout buffer incomplete (" +
                        std::to_string(written) + "/" + std::to_string(n_steps) +
                        " steps, bootstrap " + (bootstrap.size() ? "set" : "missing") + ")");
  }
}

GaeResult compute_gae(const RolloutBuffer& buf, double gamma, double lambda) {
  buf.require_complete("compute_gae");
  Mat done(buf.n_steps, buf.n_envs), timeout(buf.n_steps, buf.n_envs);
  for (int t = 0; t < buf.n_steps; ++t) {
    for (int b = 0; b < buf.n_envs; ++b) {
      done(t, b) = buf.done[t][b] ? 1.0 : 0.0;
      timeout(t, b) = buf.timeout[t][b] ? 1.0 : 0.0;
    }
  }
  return compute_gae(buf.rewards, buf.values, done, timeout, buf.timeout_values,
                     buf.bootstrap, gamma, lambda);
}

GaeResult compute_gae(const Mat& rewards, const Mat& values, const Mat& done,
                      const Mat& timeout, const Mat& timeout_values, const Vec& bootstrap,
                      double gamma, double lambda) {
  const auto T = rewards.rows();
  const auto B = rewards.cols();
  require(values.rows() == T && values.cols() == B && done.rows() == T &&
              done.cols() == B && timeout.rows() == T && timeout.cols() == B &&
              timeout_values.rows() == T && timeout_values.cols() == B,
          "compute_gae: shape mismatch");
  require(bootstrap.size() == B, "compute_gae: bootstrap values missing");
  GaeResult out;
  out.advantages.resize(T, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    double next_adv = 0.0;
    double next_value = bootstrap(b);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      const double r = rewards(t, b) + (timeout(t, b) != 0.0 ? gamma * timeout_values(t, b) : 0.0);
      const double live = 1.0 - done(t, b);
      const double delta = r + gamma * next_value * live - values(t, b);
      next_adv = delta + gamma * lambda * live * next_adv;
      out.advantages(t, b) = next_adv;
      next_value = values(t, b);
    }
  }
  out.returns = out.advantages + values;
  if (!out.advantages.allFinite()) throw NumericError("compute_gae: non-finite advantage");
  return out;
}

Mat normalize_advantages(const Mat& adv) {
  const double n = static_cast<double>(adv.size());
  require(n > 1, "normalize_advantages: need at least two entries");
  const double mean = adv.mean();
  const double var = (adv.array() - mean).square().sum() / (n - 1.0);
  return (adv.array() - mean) / (std::sqrt(var) + 1e-8);
}

std::vector<std::vector<int>> rollout_minibatches(int n_envs, int k, std::mt19937_64& rng) {
  require(k >= 1 && k <= n_envs, "rollout_minibatches: need 1 <= k <= n_envs (k=" +
                                      std::to_string(k) + ", n_envs=" +
                                      std::to_string(n_envs) + ")");
  std::vector<int> idx(n_envs);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<int>> out;
  int start = 0;
  for (int i = 0; i < k; ++i) {
    const int end = start + n_envs / k + (i < n_envs % k ? 1 : 0);
    std::vector<int> mb(idx.begin() + start, idx.begin() + end);
    std::sort(mb.begin(), mb.end());
    out.push_back(std::move(mb));
    start = end;
  }
  return out;
}

}  // namespace sma::rl
