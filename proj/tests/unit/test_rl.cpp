#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "../support/bandit.hpp"
#include "sma/meta/gradient.hpp"
#include "sma/rl/learner.hpp"
#include "sma/rl/losses.hpp"

using namespace sma;
using namespace sma::rl;

namespace {

Mat row(std::initializer_list<double> v) {
  Mat m(static_cast<Eigen::Index>(v.size()), 1);
  int i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

// Linear Gaussian actor and linear critic over the stored observations.
class LinearModel : public SequenceModel {
 public:
  std::string log_std_name() const override { return "log_std"; }

  SequenceOutputs forward(const meta::ParameterSet& p, const RolloutBuffer& buf,
                          const std::vector<int>& envs) override {
    obs_.clear();
    SequenceOutputs out;
    for (int t = 0; t < buf.n_steps; ++t) {
      Mat o(buf.obs[t].rows(), static_cast<Eigen::Index>(envs.size()));
      for (std::size_t i = 0; i < envs.size(); ++i) o.col(i) = buf.obs[t].col(envs[i]);
      Mat m = p["w"] * o;
      m.colwise() += p["b"].col(0);
      out.mean.push_back(m);
      out.value.push_back(p["v"] * o);
      obs_.push_back(o);
    }
    return out;
  }

  double backward(const meta::ParameterSet&, const SequenceGrads& g,
                  meta::ParameterSet& grads) override {
    for (std::size_t t = 0; t < obs_.size(); ++t) {
      grads["w"] += g.mean[t] * obs_[t].transpose();
      grads["b"].col(0) += g.mean[t].rowwise().sum();
      grads["v"] += g.value[t] * obs_[t].transpose();
    }
    return 0.0;
  }

 private:
  std::vector<Mat> obs_;
};

meta::ParameterSet linear_params() {
  meta::ParameterSet p;
  p.add("w", Mat::Random(2, 3) * 0.3, "policy");
  p.add("b", Mat::Zero(2, 1), "policy");
  p.add("log_std", Mat::Constant(2, 1, std::log(0.5)), "policy");
  p.add("v", Mat::Random(1, 3), "value");
  return p;
}

RolloutBuffer random_buffer(const meta::ParameterSet& p, int T, int B, std::mt19937_64& rng) {
  RolloutBuffer buf;
  buf.init(T, B);
  std::normal_distribution<double> n(0.0, 1.0);
  LinearModel model;
  for (int t = 0; t < T; ++t) {
    buf.obs[t] = Mat::NullaryExpr(3, B, [&] { return n(rng); });
  }
  std::vector<int> all(B);
  for (int b = 0; b < B; ++b) all[b] = b;
  const auto out = model.forward(p, buf, all);
  const Vec log_std = p["log_std"].col(0);
  for (int t = 0; t < T; ++t) {
    buf.actions[t] = out.mean[t] + 0.5 * Mat::NullaryExpr(2, B, [&] { return n(rng); });
    buf.log_probs.row(t) = gaussian_log_prob(out.mean[t], log_std, buf.actions[t]).transpose();
    buf.values.row(t) = out.value[t];
    // Reward prefers actions near +1 on the first dimension.
    for (int b = 0; b < B; ++b) {
      buf.rewards(t, b) = -std::pow(buf.actions[t](0, b) - 1.0, 2);
    }
  }
  buf.bootstrap = Vec::Zero(B);
  buf.written = T;
  return buf;
}

}  // namespace

TEST_CASE("compute_gae examples") {
  const Mat z1 = Mat::Zero(1, 1);
  auto one = compute_gae(Mat::Ones(1, 1), z1, Mat::Ones(1, 1), z1, z1, Vec::Zero(1), 0.99, 0.95);
  CHECK(one.advantages(0, 0) == 1.0);

  const Mat z2 = Mat::Zero(2, 1);
  auto two = compute_gae(Mat::Ones(2, 1), z2, z2, z2, z2, Vec::Zero(1), 0.99, 0.95);
  CHECK(std::abs(two.advantages(0, 0) - 1.9405) <= 1e-9);
  CHECK(std::abs(two.advantages(1, 0) - 1.0) <= 1e-9);

  auto to = compute_gae(Mat::Ones(1, 1), z1, Mat::Ones(1, 1), Mat::Ones(1, 1),
                        Mat::Constant(1, 1, 2.0), Vec::Zero(1), 0.99, 0.95);
  CHECK(std::abs(to.advantages(0, 0) - 2.98) <= 1e-12);

  CHECK_THROWS_AS(compute_gae(Mat::Ones(2, 1), z1, z2, z2, z2, Vec::Zero(1), 0.99, 0.95),
                  ContractError);
  RolloutBuffer partial;
  partial.init(3, 2);
  CHECK_THROWS_AS(compute_gae(partial, 0.99, 0.95), ContractError);
}

TEST_CASE("GAE with gamma = lambda = 1 is the Monte-Carlo advantage") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  const int T = 12, B = 5;
  Mat r = Mat::NullaryExpr(T, B, [&] { return u(rng); });
  Mat v = Mat::NullaryExpr(T, B, [&] { return u(rng); });
  Mat done = Mat::Zero(T, B);
  done(T - 1, 0) = 1.0;
  done(4, 1) = 1.0;
  const Mat z = Mat::Zero(T, B);
  const auto g = compute_gae(r, v, done, z, z, Vec::Zero(B), 1.0, 1.0);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) {
      double ret = 0.0;
      for (int k = t; k < T; ++k) {
        ret += r(k, b);
        if (done(k, b) != 0.0) break;
      }
      CHECK(std::abs(g.advantages(t, b) - (ret - v(t, b))) <= 1e-12);
    }
  }
}

TEST_CASE("advantage normalization") {
  std::mt19937_64 rng(2);
  std::exponential_distribution<double> e(0.3);
  Mat a = Mat::NullaryExpr(25, 40, [&] { return e(rng) + 5.0; });
  const Mat n = normalize_advantages(a);
  CHECK(std::abs(n.mean()) <= 1e-6);
  const double sd = std::sqrt((n.array() - n.mean()).square().sum() / (n.size() - 1.0));
  CHECK(std::abs(sd - 1.0) <= 1e-4);
}

TEST_CASE("rollout_minibatches partition env indices") {
  std::mt19937_64 rng(3);
  CHECK(rollout_minibatches(10, 1, rng).front().size() == 10);
  for (int k : {2, 3, 4, 7}) {
    const auto mbs = rollout_minibatches(30, k, rng);
    CHECK(mbs.size() == static_cast<std::size_t>(k));
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& mb : mbs) {
      total += mb.size();
      seen.insert(mb.begin(), mb.end());
    }
    CHECK(total == 30);
    CHECK(seen.size() == 30);
    CHECK(mbs.back().size() <= mbs.front().size());
  }
  CHECK_THROWS_AS(rollout_minibatches(3, 4, rng), ContractError);
  CHECK_THROWS_AS(rollout_minibatches(3, 0, rng), ContractError);
}

TEST_CASE("gaussian helpers match finite differences") {
  const Mat mean = row({0.3, -0.2});
  const Vec log_std = (Vec(2) << -0.5, 0.1).finished();
  const Mat act = row({0.1, 0.4});
  const double lp = gaussian_log_prob(mean, log_std, act)(0);
  const double sd0 = std::exp(-0.5), sd1 = std::exp(0.1);
  const double expect = -0.5 * (std::pow(0.2 / sd0, 2) + std::pow(0.6 / sd1, 2)) + 0.5 - 0.1 -
                        std::log(2.0 * M_PI);
  CHECK(lp == doctest::Approx(expect).epsilon(1e-14));
  const Mat dm = gaussian_dlogp_dmean(mean, log_std, act);
  const Mat ds = gaussian_dlogp_dlogstd(mean, log_std, act);
  for (int i = 0; i < 2; ++i) {
    auto f_mean = [&](double x) {
      Mat m = mean;
      m(i, 0) = x;
      return gaussian_log_prob(m, log_std, act)(0);
    };
    auto f_std = [&](double x) {
      Vec s = log_std;
      s(i) = x;
      return gaussian_log_prob(mean, s, act)(0);
    };
    CHECK(dm(i, 0) == doctest::Approx(meta::fd_derivative(f_mean, mean(i, 0), 1e-6)).epsilon(1e-7));
    CHECK(ds(i, 0) == doctest::Approx(meta::fd_derivative(f_std, log_std(i), 1e-6)).epsilon(1e-7));
  }
  CHECK(gaussian_entropy(Vec::Zero(1)) == doctest::Approx(0.5 * std::log(2 * M_PI * M_E)));
}

TEST_CASE("ppo_surrogate") {
  const auto same = ppo_surrogate(-1.3, -1.3, 0.7, 0.2);
  CHECK(same.loss == doctest::Approx(-0.7));
  CHECK(!same.clipped);
  const auto high = ppo_surrogate(std::log(1.5), 0.0, 1.0, 0.2);
  CHECK(high.clipped);
  CHECK(high.dloss_dlogp == 0.0);
  CHECK(high.loss == doctest::Approx(-1.2));
  const auto low_neg = ppo_surrogate(std::log(0.5), 0.0, -1.0, 0.2);
  CHECK(low_neg.clipped);
  CHECK(low_neg.dloss_dlogp == 0.0);
  const auto high_neg = ppo_surrogate(std::log(1.5), 0.0, -1.0, 0.2);
  CHECK(!high_neg.clipped);
  CHECK(high_neg.dloss_dlogp == doctest::Approx(1.5));
  for (double lp : {-0.1, 0.05, 0.15}) {
    const auto s = ppo_surrogate(lp, 0.0, 0.8, 0.2);
    if (!s.clipped) {
      const double fd = meta::fd_derivative(
          [](double x) { return ppo_surrogate(x, 0.0, 0.8, 0.2).loss; }, lp, 1e-7);
      CHECK(s.dloss_dlogp == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("trace penalty") {
  CHECK(trace_penalty({Mat::Zero(4, 3)}, 1e-2, nullptr) == 0.0);
  std::vector<Mat> grads;
  CHECK(trace_penalty({Mat::Ones(4, 3), Mat::Ones(2, 5)}, 1e-2, &grads) ==
        doctest::Approx(1e-2).epsilon(1e-15));
  REQUIRE(grads.size() == 2);
  CHECK(grads[0](0, 0) == doctest::Approx(2e-2 / 22));
  CHECK(trace_penalty({}, 1e-2, &grads) == 0.0);
  CHECK(grads.empty());
}

TEST_CASE("Adam") {
  meta::ParameterSet p;
  p.add("a", Mat::Constant(1, 1, 1.0), "policy");
  p.add("c", Mat::Constant(1, 1, 1.0), "value");
  Adam opt(p);
  opt.set_lr("policy", 0.1);
  meta::ParameterSet g = p.zeros_like();
  g["a"](0, 0) = 3.0;
  g["c"](0, 0) = 3.0;
  opt.step(p, g);
  // First Adam step moves by lr * sign(g).
  CHECK(p["a"](0, 0) == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p["c"](0, 0) == 1.0);
  for (int i = 0; i < 10; ++i) opt.decay("policy", 0.999);
  CHECK(opt.lr("policy") == 0.1 * std::pow(0.999, 10));
  double lr = 0.1;
  for (int i = 0; i < 10; ++i) lr *= 0.999;
  CHECK(opt.lr("policy") == lr);
  CHECK(opt.lr("value") == 0.0);
  CHECK_THROWS_AS(opt.set_lr("policy", -1.0), ContractError);
}

TEST_CASE("clip_actor_critic clips each side separately") {
  meta::ParameterSet g;
  g.add("a", row({3.0, 4.0}), "policy");
  g.add("v", row({30.0, 40.0}), "value");
  const auto [actor, critic] = clip_actor_critic(g, 1.0);
  CHECK(actor == doctest::Approx(5.0));
  CHECK(critic == doctest::Approx(50.0));
  CHECK(g["a"](0, 0) == doctest::Approx(0.6));
  CHECK(g["v"](1, 0) == doctest::Approx(0.8));
}

TEST_CASE("ppo_update improves a linear Gaussian policy") {
  std::mt19937_64 rng(4);
  auto params = linear_params();
  Adam opt(params);
  opt.set_lr("policy", 3e-2);
  opt.set_lr("value", 3e-2);
  LinearModel model;
  PpoConfig cfg;
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 60; ++it) {
    auto buf = random_buffer(params, 8, 32, rng);
    const double mean_r = buf.rewards.mean();
    if (it == 0) first = mean_r;
    last = mean_r;
    // Fresh buffer: recomputed log-probs equal the stored ones.
    std::vector<int> all(32);
    for (int b = 0; b < 32; ++b) all[b] = b;
    const auto out = model.forward(params, buf, all);
    for (int t = 0; t < 8; ++t) {
      const Vec lp = gaussian_log_prob(out.mean[t], params["log_std"].col(0), buf.actions[t]);
      CHECK((lp.transpose() - buf.log_probs.row(t)).cwiseAbs().maxCoeff() <= 1e-12);
    }
    const auto gae = compute_gae(buf, 0.99, 0.95);
    const auto stats = ppo_update(model, params, opt, buf, gae, cfg, rng);
    CHECK(stats.gradient_steps == 20);
    CHECK(std::isfinite(stats.policy_loss));
  }
  CHECK(last > first + 0.3);
}

TEST_CASE("a2c_update: zero advantages leave the actor mean untouched") {
  std::mt19937_64 rng(5);
  auto params = linear_params();
  Adam opt(params);
  opt.set_lr("policy", 1e-2);
  opt.set_lr("value", 1e-2);
  LinearModel model;
  auto buf = random_buffer(params, 6, 16, rng);
  GaeResult gae;
  gae.advantages = Mat::Zero(6, 16);
  gae.advantages(0, 0) = 1e-300;  // normalization needs non-zero spread
  gae.returns = buf.values;
  const Mat w0 = params["w"];
  const auto stats = a2c_update(model, params, opt, buf, gae, A2cConfig{});
  CHECK(stats.trace_penalty == 0.0);
  CHECK(stats.value_loss == doctest::Approx(0.0));
  // Only the sample with the tiny non-zero advantage pushes the mean.
  CHECK((params["w"] - w0).cwiseAbs().maxCoeff() <= 1e-2 + 1e-12);
}

TEST_CASE("updates abort on non-finite loss") {
  std::mt19937_64 rng(6);
  auto params = linear_params();
  Adam opt(params);
  opt.set_lr("policy", 1e-2);
  LinearModel model;
  auto buf = random_buffer(params, 4, 8, rng);
  auto gae = compute_gae(buf, 0.99, 0.95);
  params["w"](0, 0) = std::nan("");
  CHECK_THROWS_AS(a2c_update(model, params, opt, buf, gae, A2cConfig{}), NumericError);
}

TEST_CASE("PPO bandit: paying action probability rises monotonically") {
  const auto p = sma::testing::run_ppo_bandit(50, 7);
  double prev = 0.5;
  for (double x : p) {
    CHECK(x >= prev - 1e-12);
    prev = x;
  }
  CHECK(p.back() > 0.9);
}
