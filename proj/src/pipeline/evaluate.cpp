#include "sma/pipeline/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace sma::pipeline {

const char* to_string(Axis a) {
  switch (a) {
    case Axis::kNoNoise: return "no_noise";
    case Axis::kMotorGain: return "motor_gain";
    case Axis::kKp: return "kp";
    case Axis::kKd: return "kd";
    case Axis::kFriction: return "friction";
    case Axis::kObsNoise: return "obs_noise";
  }
  return "no_noise";
}

const char* axis_title(Axis a) {
  switch (a) {
    case Axis::kNoNoise: return "No noise";
    case Axis::kMotorGain: return "Motor gain";
    case Axis::kKp: return "P-gain";
    case Axis::kKd: return "D-gain";
    case Axis::kFriction: return "Friction";
    case Axis::kObsNoise: return "Obs noise";
  }
  return "";
}

Axis axis_from_string(const std::string& s) {
  for (Axis a : all_axes()) {
    if (s == to_string(a)) return a;
  }
  throw ContractError("unknown evaluation axis '" + s + "'");
}

std::vector<Axis> all_axes() {
  return {Axis::kNoNoise, Axis::kMotorGain, Axis::kKp, Axis::kKd, Axis::kFriction,
          Axis::kObsNoise};
}

std::vector<SweepPoint> sweep_points(const SweepSpec& spec) {
  require(spec.grid >= 2, "sweep_points: grid needs at least two samples");
  if (spec.axis == Axis::kNoNoise) return {SweepPoint{0.0, 1.0, EpisodeSpec{}}};

  const env::ExtrinsicsRanges& ref = spec.reference;
  std::vector<SweepPoint> out(spec.grid);
  for (int i = 0; i < spec.grid; ++i) {
    const double u = static_cast<double>(i) / (spec.grid - 1);
    auto lerp = [u](const env::Range& r) { return r.lo + u * r.width(); };
    SweepPoint& p = out[i];
    p.prob = 1.0 / spec.grid;
    switch (spec.axis) {
      case Axis::kMotorGain: p.value = p.spec.ext.motor_gain = lerp(ref.motor_gain); break;
      case Axis::kKp: p.value = p.spec.ext.kp = lerp(ref.kp); break;
      case Axis::kKd: p.value = p.spec.ext.kd = lerp(ref.kd); break;
      case Axis::kFriction: p.value = p.spec.ext.damping = lerp(ref.damping); break;
      case Axis::kObsNoise: p.value = p.spec.noise_scale = u * spec.noise_max; break;
      case Axis::kNoNoise: break;
    }
  }
  return out;
}

const Cell& SuiteResult::cell(const std::string& policy, Axis axis) const {
  for (const auto& c : cells) {
    if (c.policy == policy && c.axis == axis) return c;
  }
  throw ContractError("no result for '" + policy + "' on axis " + to_string(axis));
}

SuiteResult evaluate_suite(const std::vector<SuitePolicy>& policies, const SuiteSpec& spec) {
  require(spec.seeds > 0 && spec.episodes > 0, "evaluate_suite: empty evaluation");
  SuiteResult out;
  out.axes = spec.axes;
  for (const auto& pol : policies) {
    if (pol.model == nullptr) {
      out.warnings.push_back("policy '" + pol.name + "' is missing; row omitted");
      continue;
    }
    Agent agent(pol.model->agent);
    agent.set_adapter(pol.adapter);
    long reads = 0;
    for (Axis axis : spec.axes) {
      SweepSpec ss{axis, spec.grid, spec.episodes, spec.noise_max, spec.reference};
      const auto points = sweep_points(ss);
      std::vector<EpisodeSpec> specs;
      for (const auto& p : points) {
        for (int e = 0; e < spec.episodes; ++e) specs.push_back(p.spec);
      }
      Cell cell;
      cell.policy = pol.name;
      cell.axis = axis;
      cell.per_seed.resize(spec.seeds);
      Vec probs(static_cast<Eigen::Index>(points.size()));
      for (std::size_t i = 0; i < points.size(); ++i) probs(i) = points[i].prob;

      for (int s = 0; s < spec.seeds; ++s) {
        const std::uint64_t seed =
            stage_seed(spec.seed, std::string("eval.") + to_string(axis) + "." + std::to_string(s));
        const auto res =
            run_episodes(agent, pol.model->params, spec.env, spec.reference, specs, seed, &reads);
        Vec returns = Vec::Zero(probs.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
          for (int e = 0; e < spec.episodes; ++e) {
            const auto& r = res[i * spec.episodes + e];
            returns(i) += r.ret / spec.episodes;
            out.episodes.push_back(EpisodeRow{pol.name, axis, s, static_cast<int>(i), e,
                                              points[i].value, points[i].prob, r});
          }
        }
        cell.per_seed(s) = env::weighted_eval_metric(returns, probs);
      }
      cell.mean = cell.per_seed.mean();
      if (spec.seeds > 1) {
        const double var =
            (cell.per_seed.array() - cell.mean).square().sum() / (spec.seeds - 1);
        cell.ci95 = 1.96 * std::sqrt(var / spec.seeds);
      }
      out.cells.push_back(std::move(cell));
    }
    if (pol.adapter != Adapter::kExpert && reads != 0) {
      throw ContractError("evaluate_suite: non-expert policy '" + pol.name +
                          "' read privileged extrinsics");
    }
    out.rows.push_back(pol.name);
    out.privileged_reads.push_back(reads);
  }
  return out;
}

std::string format_table(const SuiteResult& r) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head{"Policy"};
  for (Axis a : r.axes) head.push_back(axis_title(a));
  grid.push_back(head);
  for (const auto& row : r.rows) {
    std::vector<std::string> line{row};
    for (Axis a : r.axes) {
      const Cell& c = r.cell(row, a);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", c.mean, c.ci95);
      line.push_back(buf);
    }
    grid.push_back(line);
  }
  // Width in code points; "±" is two bytes.
  auto width = [](const std::string& s) {
    int w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80;
    return w;
  };
  std::vector<int> cols(head.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) cols[i] = std::max(cols[i], width(line[i]));
  }
  std::string text;
  for (std::size_t l = 0; l < grid.size(); ++l) {
    for (std::size_t i = 0; i < grid[l].size(); ++i) {
      const std::string& s = grid[l][i];
      const std::string pad(cols[i] - width(s), ' ');
      text += i == 0 ? s + pad : "  " + pad + s;
    }
    text += "\n";
    if (l == 0) {
      int total = 0;
      for (std::size_t i = 0; i < cols.size(); ++i) total += cols[i] + (i ? 2 : 0);
      text += std::string(total, '-') + "\n";
    }
  }
  return text;
}

}  // namespace sma::pipeline
