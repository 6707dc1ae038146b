#pragma once

#include <random>
#include <vector>

#include "sma/meta/snn_policy.hpp"

namespace sma::rl {

// n_steps x n_envs on-policy trajectory store. Per-step matrices have one
// column per environment. `reset[t][b]` marks that env b started a new
// episode right before step t, which the re-unroll must replay.
struct RolloutBuffer {
  int n_steps = 0;
  int n_envs = 0;

  std::vector<Mat> obs;         // obs_dim x n_envs
  std::vector<Mat> privileged;  // normalized extrinsics, empty if unused
  std::vector<Mat> history;     // estimator input, empty if unused
  std::vector<Mat> actions;     // action_dim x n_envs
  std::vector<std::vector<char>> reset;
  std::vector<std::vector<char>> done;
  std::vector<std::vector<char>> timeout;

  Mat log_probs;       // n_steps x n_envs
  Mat values;          // n_steps x n_envs
  Mat rewards;         // n_steps x n_envs
  Mat timeout_values;  // V(terminal obs) where timeout, else 0
  Vec bootstrap;       // V(s_T) per env

  meta::PolicyState initial_state;  // policy state before step 0
  int written = 0;

  void init(int steps, int envs);
  bool complete() const { return written == n_steps && bootstrap.size() == n_envs; }
  void require_complete(const char* who) const;
};

struct GaeResult {
  Mat advantages;  // n_steps x n_envs
  Mat returns;     // advantages + values
};

// Rewards of timeout steps are augmented with gamma * V(s') and every done
// step (failure or timeout) restarts the recursion.
GaeResult compute_gae(const RolloutBuffer& buf, double gamma, double lambda);

GaeResult compute_gae(const Mat& rewards, const Mat& values, const Mat& done,
                      const Mat& timeout, const Mat& timeout_values, const Vec& bootstrap,
                      double gamma, double lambda);

// Zero mean, unit variance over all entries.
Mat normalize_advantages(const Mat& adv);

// Random partition of env indices into k minibatches. When k does not divide
// n_envs the first n_envs % k minibatches hold one extra env.
std::vector<std::vector<int>> rollout_minibatches(int n_envs, int k, std::mt19937_64& rng);

}  // namespace sma::rl
