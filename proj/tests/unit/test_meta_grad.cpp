#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "../support/unroll_problem.hpp"
#include "sma/meta/gradient.hpp"
#include "sma/meta/mlp.hpp"
#include "sma/meta/snn_policy.hpp"

using namespace sma;
using namespace sma::meta;
using sma::testing::Problem;
using sma::testing::make_problem;
using sma::testing::uniform;

namespace {

void check_close(const ParameterSet& analytic, const ParameterSet& fd, double rel,
                 double abs_tol) {
  REQUIRE(analytic.same_layout(fd));
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const auto& name = fd.leaves()[i].name;
    const Mat& a = analytic.at(i);
    const Mat& f = fd.at(i);
    const double err = (a - f).cwiseAbs().maxCoeff();
    const double scale = std::max(a.cwiseAbs().maxCoeff(), f.cwiseAbs().maxCoeff());
    INFO("leaf " << name << " max err " << err << " scale " << scale);
    CHECK(err <= abs_tol + rel * scale);
  }
}

int spike_count(const UnrollTape& tape, int layer) {
  double n = 0;
  for (const auto& rec : tape.steps()) n += rec.spikes[layer].sum();
  return static_cast<int>(n);
}

}  // namespace

TEST_CASE("finite differences match backward on a single plastic synapse") {
  SnnPolicyConfig cfg;
  cfg.obs_dim = 1;
  cfg.hidden = {1, 1};
  cfg.action_dim = 1;
  cfg.plasticity = PlasticityMode::kModulated;
  cfg.plastic_layer = 1;
  cfg.update_scale = 0.5;
  cfg.exact_gradient = true;
  ParameterSet params;
  auto pr = make_problem(cfg, 3, 1, 11, params, false);
  params[pr.policy.weight_name(0)](0, 0) = 1.3;
  params[pr.policy.weight_name(1)](0, 0) = 1.1;
  for (auto& o : pr.obs) o(0, 0) = 1.0;
  UnrollTape tape;
  ParameterSet grads = pr.gradient(params, &tape);
  CHECK(spike_count(tape, 0) > 0);
  CHECK(spike_count(tape, 1) > 0);
  check_close(grads, fd_oracle(params, [&](const ParameterSet& p) { return pr.loss(p); }),
              1e-6, 1e-8);
}

TEST_CASE("finite differences match backward with encoder-driven modulation") {
  for (auto layout : {plasticity::ModulatorLayout::kPerPost,
                      plasticity::ModulatorLayout::kPlusPerPre}) {
    SnnPolicyConfig cfg;
    cfg.obs_dim = 8;
    cfg.context_dim = 3;
    cfg.hidden = {8, 4};
    cfg.action_dim = 2;
    cfg.plasticity = PlasticityMode::kModulated;
    cfg.plastic_layer = 1;
    cfg.layout = layout;
    cfg.update_scale = 0.2;
    cfg.exact_gradient = true;
    ParameterSet params;
    auto pr = make_problem(cfg, 12, 2, 21, params, true);
    pr.reset[5][1] = 1;  // env 1 restarts mid-window
    UnrollTape tape;
    const ParameterSet grads = pr.gradient(params, &tape);
    CHECK(spike_count(tape, 0) > 10);
    CHECK(spike_count(tape, 1) > 3);
    const auto fd = fd_oracle(params, [&](const ParameterSet& p) { return pr.loss(p); });
    check_close(grads, fd, 1e-5, 1e-8);
    CHECK(grads[SnnPolicy::kRate].cwiseAbs().maxCoeff() > 1e-6);
    CHECK(std::abs(grads[SnnPolicy::kEligDecay](0, 0)) > 1e-8);
    CHECK(std::abs(grads[SnnPolicy::kTraceDecay](0, 0)) > 1e-8);
    CHECK(grads["enc.l0.w"].cwiseAbs().maxCoeff() > 1e-8);
  }
}

TEST_CASE("finite differences match backward for STDP and static policies") {
  for (auto mode : {PlasticityMode::kStdp, PlasticityMode::kNone}) {
    SnnPolicyConfig cfg;
    cfg.obs_dim = 5;
    cfg.hidden = {6, 6, 3};
    cfg.plasticity = mode;
    cfg.plastic_layer = 2;
    cfg.update_scale = 0.3;
    cfg.exact_gradient = true;
    ParameterSet params;
    auto pr = make_problem(cfg, 8, 3, 31, params, false);
    pr.reset[3][0] = 1;
    const auto grads = pr.gradient(params);
    check_close(grads, fd_oracle(params, [&](const ParameterSet& p) { return pr.loss(p); }),
                1e-5, 1e-8);
  }
}

TEST_CASE("unused parameters receive exactly zero gradient") {
  SnnPolicyConfig cfg;
  cfg.obs_dim = 4;
  cfg.hidden = {5, 3};
  cfg.plasticity = PlasticityMode::kModulated;
  cfg.plastic_layer = 1;
  ParameterSet params;
  auto pr = make_problem(cfg, 4, 2, 41, params, false);
  const auto grads = pr.gradient(params);
  // log_std does not enter the mean; with no modulators the plasticity
  // coefficients cannot reach the weights.
  CHECK(grads[SnnPolicy::kLogStd].isZero(0.0));
  CHECK(grads[SnnPolicy::kRate].isZero(0.0));
  CHECK(grads[SnnPolicy::kAPlus].isZero(0.0));
  CHECK(grads[SnnPolicy::kEligDecay].isZero(0.0));
}

TEST_CASE("sub-threshold dynamics follow the linear closed form") {
  SnnPolicyConfig cfg;
  cfg.obs_dim = 1;
  cfg.hidden = {1};
  cfg.action_dim = 1;
  cfg.exact_gradient = true;
  SnnPolicy policy(cfg);
  ParameterSet params;
  std::mt19937_64 rng(1);
  policy.init_params(params, rng);
  const double w = 0.02, b = 0.01, x = 0.5;
  params[policy.weight_name(0)](0, 0) = w;
  params[policy.bias_name(0)](0, 0) = b;
  const int T = 20;
  std::vector<StepInput> in(T);
  for (auto& s : in) s.obs = Mat::Constant(1, 1, x);
  PolicyState st = policy.initial_state(1);
  UnrollTape tape;
  policy.unroll_forward(params, st, in, &tape);
  const double lambda = cfg.lif.decay;
  const double geo = (1.0 - std::pow(lambda, T)) / (1.0 - lambda);
  CHECK(st.v[0](0, 0) == doctest::Approx((w * x + b) * geo).epsilon(1e-12));
  CHECK(spike_count(tape, 0) == 0);

  std::vector<StepGrad> g(T);
  g.back().v = {Mat::Ones(1, 1)};
  ParameterSet grads = params.zeros_like();
  policy.backward(params, tape, g, grads);
  CHECK(grads[policy.weight_name(0)](0, 0) == doctest::Approx(x * geo).epsilon(1e-12));
  CHECK(grads[policy.bias_name(0)](0, 0) == doctest::Approx(geo).epsilon(1e-12));
}

TEST_CASE("surrogate and exact gradients agree outside the surrogate support") {
  SnnPolicyConfig cfg;
  cfg.obs_dim = 3;
  cfg.hidden = {4, 3};
  ParameterSet params;
  auto pr = make_problem(cfg, 6, 2, 51, params, false);
  for (auto& o : pr.obs) o.setConstant(-5.0);
  params[pr.policy.weight_name(0)].setConstant(0.5);
  params[pr.policy.bias_name(1)].setConstant(-0.5);
  auto exact = pr;
  auto cfg_exact = cfg;
  cfg_exact.exact_gradient = true;
  exact.policy = SnnPolicy(cfg_exact);
  UnrollTape tape;
  const auto g_sur = pr.gradient(params, &tape);
  for (const auto& rec : tape.steps()) {
    for (const auto& vp : rec.v_pre) CHECK(vp.maxCoeff() <= 0.0);
  }
  const auto g_exact = exact.gradient(params);
  CHECK(g_sur.flatten() == g_exact.flatten());
}

TEST_CASE("surrogate gradient carries the mean loss into hidden weights") {
  SnnPolicyConfig cfg;
  cfg.obs_dim = 4;
  cfg.hidden = {6, 4};
  ParameterSet params;
  auto pr = make_problem(cfg, 10, 2, 61, params, false);
  for (auto& g : pr.weights) {
    g.v.clear();
    g.x_pre.resize(0, 0);
  }
  const auto grads = pr.gradient(params);
  CHECK(grads[pr.policy.weight_name(0)].cwiseAbs().maxCoeff() > 0.0);
  CHECK(grads[SnnPolicy::kReadoutW].cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("replay reproduces the recorded forward pass bitwise") {
  SnnPolicyConfig cfg;
  cfg.obs_dim = 6;
  cfg.context_dim = 2;
  cfg.hidden = {8, 6, 4};
  cfg.plasticity = PlasticityMode::kModulated;
  ParameterSet params;
  auto pr = make_problem(cfg, 15, 3, 71, params, true);
  pr.reset[7][2] = 1;
  PolicyState st = pr.start;
  UnrollTape tape;
  const auto means = pr.policy.unroll_forward(params, st, pr.inputs(params, nullptr), &tape);
  const auto again = pr.policy.replay(params, tape);
  REQUIRE(again.size() == means.size());
  for (std::size_t t = 0; t < means.size(); ++t) CHECK(again[t] == means[t]);
}

TEST_CASE("batched forward matches single-environment forward") {
  SnnPolicyConfig cfg;
  cfg.obs_dim = 6;
  cfg.hidden = {8, 6, 4};
  cfg.plasticity = PlasticityMode::kModulated;
  ParameterSet params;
  std::mt19937_64 rng(3);
  SnnPolicy policy(cfg);
  policy.init_params(params, rng);
  policy.init_plasticity(params, rng);
  PolicyState all = policy.initial_state(4);
  PolicyState one = policy.initial_state(1);
  for (int t = 0; t < 20; ++t) {
    StepInput in;
    in.obs = uniform(6, 4, rng, -1, 2);
    in.modulators = uniform(cfg.modulator_dim(), 4, rng, -1, 1);
    StepInput in1;
    in1.obs = in.obs.col(2);
    in1.modulators = in.modulators.col(2);
    const Mat m = policy.step(params, all, in);
    const Mat m1 = policy.step(params, one, in1);
    CHECK(m.col(2) == m1.col(0));
  }
}

TEST_CASE("unroll beyond the truncation window is rejected") {
  SnnPolicyConfig cfg;
  cfg.obs_dim = 2;
  cfg.hidden = {3};
  cfg.window = 5;
  ParameterSet params;
  std::mt19937_64 rng(4);
  SnnPolicy policy(cfg);
  policy.init_params(params, rng);
  PolicyState st = policy.initial_state(1);
  std::vector<StepInput> in(6);
  for (auto& s : in) s.obs = Mat::Zero(2, 1);
  UnrollTape tape;
  CHECK_THROWS_AS(policy.unroll_forward(params, st, in, &tape), ContractError);

  tape.begin(st, 5);
  for (int t = 0; t < 5; ++t) policy.step(params, st, in[t], &tape);
  CHECK_THROWS_AS(policy.step(params, st, in[5], &tape), ContractError);
}

TEST_CASE("windowed gradients do not depend on earlier windows") {
  SnnPolicyConfig cfg;
  cfg.obs_dim = 4;
  cfg.hidden = {6, 4};
  cfg.plasticity = PlasticityMode::kModulated;
  cfg.plastic_layer = 1;
  cfg.exact_gradient = true;
  cfg.update_scale = 0.2;
  ParameterSet params;
  auto pr = make_problem(cfg, 20, 2, 81, params, false);
  // Run a first window to move the state, then differentiate the second.
  std::mt19937_64 rng(5);
  PolicyState st = pr.start;
  for (int t = 0; t < 20; ++t) {
    StepInput in;
    in.obs = uniform(4, 2, rng, -0.5, 2);
    in.modulators = uniform(cfg.modulator_dim(), 2, rng, -1, 1);
    pr.policy.step(params, st, in);
  }
  pr.start = st;
  const auto g1 = pr.gradient(params);
  const auto fd = fd_oracle(params, [&](const ParameterSet& p) { return pr.loss(p); });
  check_close(g1, fd, 1e-5, 1e-8);

  // A fresh tape started from a copy of the carried state gives the same
  // gradient: nothing from the first window leaks in.
  auto pr2 = pr;
  pr2.start = pr.start.select({0, 1});
  CHECK(pr2.gradient(params).flatten() == g1.flatten());
}

TEST_CASE("clip_global_norm") {
  ParameterSet g;
  g.add("a", (Mat(2, 1) << 3.0, 4.0).finished(), "policy");
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g["a"](0, 0) == doctest::Approx(0.6));
  CHECK(g["a"](1, 0) == doctest::Approx(0.8));

  ParameterSet small;
  small.add("b", Mat::Constant(3, 1, 0.1), "policy");
  const Mat before = small["b"];
  clip_global_norm(small, 1.0);
  CHECK(small["b"] == before);

  const Vec v = clip_global_norm(Vec((Vec(2) << 3.0, 4.0).finished()), 1.0);
  CHECK(v(0) == doctest::Approx(0.6));

  ParameterSet bad;
  bad.add("ok", Mat::Ones(1, 1), "policy");
  bad.add("broken", Mat::Constant(1, 1, std::nan("")), "policy");
  try {
    clip_global_norm(bad, 1.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("broken") != std::string::npos);
  }
  CHECK_THROWS_AS(clip_global_norm(g, 0.0), ContractError);
}

TEST_CASE("finite difference oracle") {
  CHECK(fd_derivative([](double x) { return x * x; }, 3.0, 1e-5) ==
        doctest::Approx(6.0).epsilon(1e-9));
  for (double h : {1e-2, 1e-3, 1e-4, 1e-5, 1e-6}) {
    const double d = fd_derivative([](double x) { return std::sin(x); }, 0.7, h);
    CHECK(std::abs(d - std::cos(0.7)) <= h * h + 1e-9);
  }

  ParameterSet p;
  p.add("x", (Mat(2, 1) << 1.0, -2.0).finished(), "policy");
  const auto g = fd_oracle(p, [](const ParameterSet& q) {
    return q["x"](0, 0) * q["x"](0, 0) + 3.0 * q["x"](1, 0);
  });
  CHECK(g["x"](0, 0) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g["x"](1, 0) == doctest::Approx(3.0).epsilon(1e-8));

  int calls = 0;
  CHECK_THROWS_AS(fd_oracle(p, [&](const ParameterSet&) { return double(++calls); }),
                  NumericError);
}

TEST_CASE("mlp backward matches finite differences") {
  Mlp mlp("m", {5, {7, 6}, 3});
  ParameterSet params;
  std::mt19937_64 rng(9);
  mlp.init(params, rng, "value");
  const Mat x = uniform(5, 4, rng, -2, 2);
  const Mat w = uniform(3, 4, rng, -1, 1);
  auto loss = [&](const ParameterSet& p) { return (mlp.forward(p, x).array() * w.array()).sum(); };
  Mlp::Cache cache;
  mlp.forward(params, x, &cache);
  ParameterSet grads = params.zeros_like();
  const Mat dx = mlp.backward(params, cache, w, grads);
  check_close(grads, fd_oracle(params, loss), 1e-6, 1e-9);
  CHECK(dx.rows() == 5);
  CHECK_THROWS_AS(mlp.forward(params, Mat::Zero(4, 1)), ContractError);
}

TEST_CASE("parameter set bookkeeping") {
  ParameterSet p;
  p.add("a", Mat::Ones(2, 2), "policy");
  p.add("b", Mat::Constant(3, 1, 2.0), "value");
  CHECK(p.scalar_count() == 7);
  CHECK(p.squared_norm() == doctest::Approx(16.0));
  const auto c1 = p.checksum({"policy"});
  p["b"](0, 0) = 5.0;
  CHECK(p.checksum({"policy"}) == c1);
  CHECK(p.checksum() != ParameterSet(p).zeros_like().checksum());
  Vec flat = p.flatten();
  flat(0) = -1.0;
  p.assign_flat(flat);
  CHECK(p["a"](0, 0) == -1.0);
  CHECK_THROWS_AS(p.add("a", Mat::Ones(1, 1), "policy"), ContractError);
  CHECK_THROWS_AS(p["missing"], ContractError);
  p.remove_prefix("b");
  CHECK(!p.contains("b"));
}
