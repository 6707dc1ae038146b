#include "sma/env/testbed.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/LU>

namespace sma::env {
namespace {

void check_range(const Range& r, const char* name) {
  require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi,
          std::string("invalid range for ") + name + ": [" + std::to_string(r.lo) +
              ", " + std::to_string(r.hi) + "]");
}

double draw(const Range& r, std::mt19937_64& rng) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

double norm_to_unit(double x, const Range& r) {
  return r.width() > 0.0 ? 2.0 * (x - r.lo) / r.width() - 1.0 : 0.0;
}

double symmetric(double half_width, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  return half_width * u;
}

}  // namespace

Vec Extrinsics::as_vector() const {
  Vec v(kDim);
  v << motor_gain, kp, kd, damping, payload;
  return v;
}

void ExtrinsicsRanges::validate() const {
  check_range(motor_gain, "motor_gain");
  check_range(kp, "kp");
  check_range(kd, "kd");
  check_range(damping, "damping");
  check_range(payload, "payload");
  require(payload.lo > 0.0, "payload range must be positive");
}

Vec ExtrinsicsRanges::normalize(const Extrinsics& e) const {
  Vec v(Extrinsics::kDim);
  v << norm_to_unit(e.motor_gain, motor_gain), norm_to_unit(e.kp, kp),
      norm_to_unit(e.kd, kd), norm_to_unit(e.damping, damping),
      norm_to_unit(e.payload, payload);
  return v;
}

ExtrinsicsRanges ExtrinsicsRanges::fixed(const Extrinsics& e) {
  ExtrinsicsRanges r;
  r.motor_gain = {e.motor_gain, e.motor_gain};
  r.kp = {e.kp, e.kp};
  r.kd = {e.kd, e.kd};
  r.damping = {e.damping, e.damping};
  r.payload = {e.payload, e.payload};
  return r;
}

Extrinsics sample_extrinsics(const ExtrinsicsRanges& ranges, std::mt19937_64& rng) {
  ranges.validate();
  Extrinsics e;
  e.motor_gain = draw(ranges.motor_gain, rng);
  e.kp = draw(ranges.kp, rng);
  e.kd = draw(ranges.kd, rng);
  e.damping = draw(ranges.damping, rng);
  e.payload = draw(ranges.payload, rng);
  return e;
}

Extrinsics sample_extrinsics(const ExtrinsicsRanges& ranges, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_extrinsics(ranges, rng);
}

void TestbedConfig::validate() const {
  require(dt > 0.0 && decimation > 0, "testbed: dt and decimation must be positive");
  require(inertia > 0.0 && torque_limit > 0.0, "testbed: inertia/torque limit must be positive");
  require(max_episode_len > 0, "testbed: episode length must be positive");
  require(std::abs(jacobian.determinant()) > 1e-9, "testbed: jacobian must be full rank");
  require(noise.scale >= 0.0, "testbed: noise scale must be non-negative");
  require(reward.tracking_sigma > 0.0, "testbed: tracking sigma must be positive");
  check_range(cmd_vx, "cmd_vx");
  check_range(cmd_vy, "cmd_vy");
  ranges.validate();
}

Vec2 pd_torque(const Vec2& action, const Vec2& q, const Vec2& q_dot, const Vec2& q0,
               const Extrinsics& ext, double action_scale, double torque_limit) {
  const Vec2 tau =
      ext.motor_gain * (ext.kp * (action_scale * action + q0 - q) - ext.kd * q_dot);
  return tau.cwiseMax(-torque_limit).cwiseMin(torque_limit);
}

void integrate_substep(EnvState& s, const Vec2& torque, const Extrinsics& ext,
                       const TestbedConfig& cfg) {
  s.torque = torque;
  s.q_ddot = (torque - ext.damping * s.q_dot) / (cfg.inertia * ext.payload);
  s.q_dot += cfg.dt * s.q_ddot;
  s.q += cfg.dt * s.q_dot;
}

void advance(EnvState& s, const Vec2& action, const Extrinsics& ext,
             const TestbedConfig& cfg) {
  const Vec2 q0 = s.q;
  for (int k = 0; k < cfg.decimation; ++k) {
    const Vec2 tau = pd_torque(action, s.q, s.q_dot, q0, ext, cfg.action_scale,
                               cfg.torque_limit);
    integrate_substep(s, tau, ext, cfg);
  }
}

Vec2 body_velocity(const EnvState& s, const TestbedConfig& cfg) {
  return cfg.jacobian * s.q_dot;
}

double yaw_rate(const EnvState& s, const TestbedConfig& cfg) {
  return cfg.yaw_gain * s.q_dot.sum();
}

Command make_command(const Vec2& v_star, const TestbedConfig& cfg) {
  Command c;
  c.v_star = v_star;
  const Vec2 q_dot = cfg.jacobian.inverse() * v_star;
  c.omega_star = cfg.yaw_gain * q_dot.sum();
  return c;
}

RewardBreakdown reward_terms(const TestbedConfig& cfg, const Vec2& body_vel,
                             const Eigen::Vector3d& ang_vel, const Command& cmd,
                             const Vec2& torque, const Vec2& q_ddot, const Vec2& action,
                             const Vec2& prev_action) {
  const auto& r = cfg.reward;
  auto phi = [&](double sq) { return std::exp(-sq / r.tracking_sigma); };
  RewardBreakdown out;
  out.terms[0] = r.lin_vel * phi((cmd.v_star - body_vel).squaredNorm());
  const double yaw_err = cmd.omega_star - ang_vel.z();
  out.terms[1] = r.ang_vel * phi(yaw_err * yaw_err);
  out.terms[2] = r.ang_vel_xy * ang_vel.head<2>().squaredNorm();
  out.terms[3] = r.torque * torque.squaredNorm();
  out.terms[4] = r.accel * q_ddot.squaredNorm();
  out.terms[5] = r.action_rate * (action - prev_action).squaredNorm();
  double sum = 0.0;
  for (double t : out.terms) sum += t;
  out.total = std::max(0.0, sum);
  return out;
}

double wrap_angle(double x) {
  constexpr double pi = std::numbers::pi;
  double y = std::fmod(x + pi, 2.0 * pi);
  if (y <= 0.0) y += 2.0 * pi;
  return y - pi;
}

Vec observe(const TestbedConfig& cfg, const EnvState& s, const Command& cmd,
            const Vec2& prev_action, std::mt19937_64& rng) {
  const auto& n = cfg.noise;
  const auto& sc = cfg.obs;
  const double k = n.scale;
  const Vec2 v = body_velocity(s, cfg);
  Vec o(TestbedConfig::kObsDim);
  int i = 0;
  for (int j = 0; j < 2; ++j) o(i++) = (v(j) + symmetric(k * n.lin_vel, rng)) * sc.lin_vel;
  const double w[3] = {0.0, 0.0, yaw_rate(s, cfg)};
  for (double wj : w) o(i++) = (wj + symmetric(k * n.ang_vel, rng)) * sc.ang_vel;
  const double g[3] = {0.0, 0.0, -1.0};
  for (double gj : g) o(i++) = gj + symmetric(k * n.gravity, rng);
  o(i++) = cmd.v_star(0) * sc.lin_vel;
  o(i++) = cmd.v_star(1) * sc.lin_vel;
  o(i++) = cmd.omega_star * sc.ang_vel;
  for (int j = 0; j < 2; ++j) {
    o(i++) = wrap_angle(s.q(j) + symmetric(k * n.joint_pos, rng)) * sc.joint_pos;
  }
  for (int j = 0; j < 2; ++j) {
    o(i++) = (s.q_dot(j) + symmetric(k * n.joint_vel, rng)) * sc.joint_vel;
  }
  o(i++) = prev_action(0);
  o(i++) = prev_action(1);
  return o.cwiseMax(-sc.clip).cwiseMin(sc.clip);
}

double weighted_eval_metric(const Vec& returns, const Vec& probs) {
  require(returns.size() == probs.size(),
          "weighted_eval_metric: " + std::to_string(returns.size()) + " returns vs " +
              std::to_string(probs.size()) + " probabilities");
  require((probs.array() >= 0.0).all(), "weighted_eval_metric: negative probability");
  require(std::abs(probs.sum() - 1.0) <= 1e-9,
          "weighted_eval_metric: probabilities do not sum to 1");
  double s = 0.0;
  for (Eigen::Index i = 0; i < returns.size(); ++i) s += returns(i) * probs(i);
  return s;
}

// ---- Testbed ---------------------------------------------------------------

Testbed::Testbed(TestbedConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(seed) {
  cfg_.validate();
}

const Extrinsics& Testbed::extrinsics() const {
  ++privileged_reads_;
  return ext_;
}

Vec Testbed::reset() {
  ext_ = sample_extrinsics(cfg_.ranges, rng_);
  Vec2 v_star(draw(cfg_.cmd_vx, rng_), draw(cfg_.cmd_vy, rng_));
  cmd_ = make_command(v_star, cfg_);
  const long step = state_.step;
  state_ = EnvState{};
  state_.step = step;
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  state_.q = Vec2(angle(rng_), angle(rng_));
  prev_action_.setZero();
  episode_return_ = 0.0;
  return observe(cfg_, state_, cmd_, prev_action_, rng_);
}

StepResult Testbed::step(const Vec2& action) {
  require(action.allFinite(), "Testbed::step: non-finite action");
  advance(state_, action, ext_, cfg_);
  ++state_.step;
  ++state_.episode_step;

  const Vec2 v = body_velocity(state_, cfg_);
  const Eigen::Vector3d w(0.0, 0.0, yaw_rate(state_, cfg_));
  const auto rw = reward_terms(cfg_, v, w, cmd_, state_.torque, state_.q_ddot, action,
                               prev_action_);
  prev_action_ = action;

  StepResult out;
  out.reward = rw.total;
  episode_return_ += rw.total;
  const bool failed = !state_.q.allFinite() || !state_.q_dot.allFinite() ||
                      state_.q.cwiseAbs().maxCoeff() > cfg_.q_bound;
  out.timeout = !failed && state_.episode_step >= cfg_.max_episode_len;
  out.done = failed || out.timeout;
  out.obs = observe(cfg_, state_, cmd_, prev_action_, rng_);
  return out;
}

// ---- VecEnv ----------------------------------------------------------------

VecEnv::VecEnv(const TestbedConfig& cfg, int n, std::uint64_t seed) {
  require(n > 0, "VecEnv: need at least one environment");
  envs_.reserve(n);
  for (int i = 0; i < n; ++i) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(i), std::uint64_t{0x5eed}};
    std::array<std::uint64_t, 1> s{};
    seq.generate(s.begin(), s.end());
    envs_.emplace_back(cfg, s[0]);
  }
}

Mat VecEnv::reset() {
  Mat obs(TestbedConfig::kObsDim, size());
  for (int i = 0; i < size(); ++i) obs.col(i) = envs_[i].reset();
  return obs;
}

VecStep VecEnv::step(const Mat& actions) {
  require(actions.rows() == TestbedConfig::kActionDim && actions.cols() == size(),
          "VecEnv::step: actions are " + shape_str(actions));
  VecStep out;
  out.obs.resize(TestbedConfig::kObsDim, size());
  out.terminal_obs.resize(TestbedConfig::kObsDim, size());
  out.reward.resize(size());
  out.episode_return = Vec::Zero(size());
  out.done.assign(size(), 0);
  out.timeout.assign(size(), 0);
  for (int i = 0; i < size(); ++i) {
    const auto r = envs_[i].step(actions.col(i));
    out.reward(i) = r.reward;
    out.done[i] = r.done;
    out.timeout[i] = r.timeout;
    out.terminal_obs.col(i) = r.obs;
    if (r.done) {
      out.episode_return(i) = envs_[i].episode_return();
      out.obs.col(i) = envs_[i].reset();
    } else {
      out.obs.col(i) = r.obs;
    }
  }
  return out;
}

Mat VecEnv::privileged(const ExtrinsicsRanges& reference) const {
  Mat p(Extrinsics::kDim, size());
  for (int i = 0; i < size(); ++i) p.col(i) = reference.normalize(envs_[i].extrinsics());
  return p;
}

long VecEnv::privileged_reads() const {
  long n = 0;
  for (const auto& e : envs_) n += e.privileged_reads();
  return n;
}

}  // namespace sma::env
