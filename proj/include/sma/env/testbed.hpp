#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "sma/common.hpp"

// Desk-scale randomized-dynamics testbed: two PD-driven joints whose
// velocities map to a planar body velocity through a fixed Jacobian.
namespace sma::env {

using Vec2 = Eigen::Vector2d;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
};

struct Extrinsics {
  static constexpr int kDim = 5;
  double motor_gain = 1.0;
  double kp = 20.0;
  double kd = 0.5;
  double damping = 1.0;
  double payload = 1.0;

  Vec as_vector() const;
};

struct ExtrinsicsRanges {
  Range motor_gain{0.8, 1.2};
  Range kp{12.5, 37.5};
  Range kd{0.25, 0.75};
  Range damping{0.1, 2.75};
  Range payload{0.75, 1.5};

  void validate() const;
  // Maps each field to [-1, 1] over its range; degenerate ranges map to 0.
  Vec normalize(const Extrinsics& e) const;
  // Every range collapsed onto the given point.
  static ExtrinsicsRanges fixed(const Extrinsics& e);
};

Extrinsics sample_extrinsics(const ExtrinsicsRanges& ranges, std::mt19937_64& rng);
Extrinsics sample_extrinsics(const ExtrinsicsRanges& ranges, std::uint64_t seed);

// Half-widths of the uniform sensor noise, in physical units.
struct NoiseConfig {
  double joint_pos = 0.01;
  double joint_vel = 1.5;
  double gravity = 0.05;
  double lin_vel = 0.1;
  double ang_vel = 0.2;
  double scale = 1.0;  // global multiplier; 0 disables noise
};

struct RewardScales {
  double lin_vel = 1.0;
  double ang_vel = 0.5;
  double ang_vel_xy = -0.05;
  double torque = -0.0002;
  double accel = -2.5e-7;
  double action_rate = -0.01;
  double tracking_sigma = 0.25;
};

struct ObsScales {
  double lin_vel = 2.0;
  double ang_vel = 0.25;
  double joint_pos = 1.0;
  double joint_vel = 0.05;
  double clip = 100.0;
};

struct TestbedConfig {
  static constexpr int kObsDim = 17;
  static constexpr int kActionDim = 2;

  double dt = 0.005;
  int decimation = 4;
  double inertia = 0.05;
  double action_scale = 0.25;
  double torque_limit = 10.0;
  Eigen::Matrix2d jacobian = (Eigen::Matrix2d() << 0.5, 0.5, 0.5, -0.5).finished();
  double yaw_gain = 0.8;
  double q_bound = 1000.0;
  int max_episode_len = 500;
  Range cmd_vx{-0.5, 0.5};
  Range cmd_vy{-0.5, 0.5};

  ExtrinsicsRanges ranges;
  NoiseConfig noise;
  RewardScales reward;
  ObsScales obs;

  void validate() const;
};

struct EnvState {
  Vec2 q = Vec2::Zero();
  Vec2 q_dot = Vec2::Zero();
  Vec2 q_ddot = Vec2::Zero();  // from the last substep
  Vec2 torque = Vec2::Zero();  // from the last substep
  long step = 0;               // policy steps since construction
  int episode_step = 0;
};

struct Command {
  Vec2 v_star = Vec2::Zero();
  double omega_star = 0.0;
};

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;
  bool timeout = false;
};

struct RewardBreakdown {
  std::array<double, 6> terms{};
  double total = 0.0;
};

// tau = gain * [kp (c_a a + q0 - q) - kd q_dot], clipped to +-limit.
Vec2 pd_torque(const Vec2& action, const Vec2& q, const Vec2& q_dot, const Vec2& q0,
               const Extrinsics& ext, double action_scale, double torque_limit);

// One semi-implicit Euler substep under a given torque.
void integrate_substep(EnvState& s, const Vec2& torque, const Extrinsics& ext,
                       const TestbedConfig& cfg);

// Full policy step of physics: latch q0 = q, then `decimation` PD substeps.
void advance(EnvState& s, const Vec2& action, const Extrinsics& ext,
             const TestbedConfig& cfg);

Vec2 body_velocity(const EnvState& s, const TestbedConfig& cfg);
double yaw_rate(const EnvState& s, const TestbedConfig& cfg);

// Command with omega* consistent with v* under the kinematic map.
Command make_command(const Vec2& v_star, const TestbedConfig& cfg);

RewardBreakdown reward_terms(const TestbedConfig& cfg, const Vec2& body_vel,
                             const Eigen::Vector3d& ang_vel, const Command& cmd,
                             const Vec2& torque, const Vec2& q_ddot, const Vec2& action,
                             const Vec2& prev_action);

// Noisy, scaled, clipped observation. Noise draws come from `rng`.
Vec observe(const TestbedConfig& cfg, const EnvState& s, const Command& cmd,
            const Vec2& prev_action, std::mt19937_64& rng);

double wrap_angle(double x);

// sum_i R_i P_i; P must be non-negative and sum to 1 within 1e-9.
double weighted_eval_metric(const Vec& returns, const Vec& probs);

// Single environment instance with its own RNG stream.
class Testbed {
 public:
  Testbed(TestbedConfig cfg, std::uint64_t seed);

  // Starts a new episode: fresh extrinsics (from cfg.ranges), command, state.
  Vec reset();
  StepResult step(const Vec2& action);

  const TestbedConfig& config() const { return cfg_; }
  TestbedConfig& mutable_config() { return cfg_; }
  const EnvState& state() const { return state_; }
  const Command& command() const { return cmd_; }
  const Vec2& prev_action() const { return prev_action_; }
  double episode_return() const { return episode_return_; }

  // Privileged access; every call is counted.
  const Extrinsics& extrinsics() const;
  long privileged_reads() const { return privileged_reads_; }
  void set_extrinsics(const Extrinsics& e) { ext_ = e; }
  // Shortens the current episode, e.g. to desynchronize a batch of envs.
  void set_episode_step(int s) { state_.episode_step = s; }

 private:
  TestbedConfig cfg_;
  std::mt19937_64 rng_;
  EnvState state_;
  Extrinsics ext_;
  Command cmd_;
  Vec2 prev_action_ = Vec2::Zero();
  double episode_return_ = 0.0;
  mutable long privileged_reads_ = 0;
};

struct VecStep {
  Mat obs;           // obs after the step (reset obs for finished envs)
  Vec reward;
  std::vector<char> done;
  std::vector<char> timeout;
  Mat terminal_obs;  // obs at the end of finished episodes, else equal to obs
  Vec episode_return;  // return of episodes that finished this step, else 0
};

// Batch of independent testbeds with non-overlapping seeded RNG streams.
class VecEnv {
 public:
  VecEnv(const TestbedConfig& cfg, int n, std::uint64_t seed);

  int size() const { return static_cast<int>(envs_.size()); }
  Mat reset();
  VecStep step(const Mat& actions);

  Testbed& at(int i) { return envs_.at(i); }
  const Testbed& at(int i) const { return envs_.at(i); }

  // Privileged extrinsics of every env normalized against `reference`
  // (counted reads).
  Mat privileged(const ExtrinsicsRanges& reference) const;
  long privileged_reads() const;

 private:
  std::vector<Testbed> envs_;
};

}  // namespace sma::env
