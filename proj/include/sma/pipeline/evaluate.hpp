#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sma/pipeline/rollout.hpp"
#include "sma/pipeline/stages.hpp"

namespace sma::pipeline {

enum class Axis { kNoNoise, kMotorGain, kKp, kKd, kFriction, kObsNoise };

const char* to_string(Axis a);       // "no_noise", "motor_gain", ...
const char* axis_title(Axis a);      // column heading
Axis axis_from_string(const std::string& s);
std::vector<Axis> all_axes();

// One grid sample along an axis. Factor axes move one extrinsic over its
// reference range with the others nominal and no sensor noise; the noise axis
// scales sensor noise at nominal extrinsics.
struct SweepPoint {
  double value = 0.0;
  double prob = 0.0;
  EpisodeSpec spec;
};

struct SweepSpec {
  Axis axis = Axis::kNoNoise;
  int grid = 11;
  int episodes = 8;          // per sample and seed
  double noise_max = 1.0;
  env::ExtrinsicsRanges reference;
};

// Uniform probabilities; "no noise" is a single nominal sample.
std::vector<SweepPoint> sweep_points(const SweepSpec& spec);

struct SuitePolicy {
  std::string name;          // table row, e.g. "SMA Expert"
  const Model* model = nullptr;  // nullptr: row omitted with a warning
  Adapter adapter = Adapter::kNone;
};

struct SuiteSpec {
  env::TestbedConfig env;  // dynamics and episode length
  env::ExtrinsicsRanges reference;
  std::vector<Axis> axes = all_axes();
  int grid = 11;
  int episodes = 8;
  int seeds = 20;
  double noise_max = 1.0;
  std::uint64_t seed = 1;
};

struct Cell {
  std::string policy;
  Axis axis = Axis::kNoNoise;
  double mean = 0.0;  // over seeds of sum_i R_i P_i
  double ci95 = 0.0;  // half-width, normal approximation
  Vec per_seed;
};

struct EpisodeRow {
  std::string policy;
  Axis axis = Axis::kNoNoise;
  int seed_index = 0, point = 0, episode = 0;
  double value = 0.0, prob = 0.0;
  EpisodeResult result;
};

struct SuiteResult {
  std::vector<std::string> rows;
  std::vector<Axis> axes;
  std::vector<Cell> cells;
  std::vector<EpisodeRow> episodes;
  std::vector<std::string> warnings;
  std::vector<long> privileged_reads;  // per row

  const Cell& cell(const std::string& policy, Axis axis) const;
};

// Every seed uses the same env streams for all policies (paired design).
// Throws if a non-expert row reads privileged extrinsics.
SuiteResult evaluate_suite(const std::vector<SuitePolicy>& policies, const SuiteSpec& spec);

// Aligned text table: one row per policy, "mean ± ci" per axis.
std::string format_table(const SuiteResult& r);

}  // namespace sma::pipeline
