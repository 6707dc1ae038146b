#include "sma/harness/commands.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include "json.hpp"
#include "sma/harness/checkpoint.hpp"
#include "sma/harness/metrics.hpp"
#include "sma/harness/plot.hpp"
#include "sma/pipeline/evaluate.hpp"

namespace sma::harness {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using pipeline::Adapter;
using pipeline::Model;

namespace {

std::string path_in(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ContractError("cannot write '" + path + "'");
  f << text;
}

Checkpoint require_checkpoint(const Config& cfg, Stage needed, Stage by) {
  const std::string path = checkpoint_path(cfg, needed);
  if (!fs::exists(path)) {
    throw MissingPrerequisite(std::string("stage '") + to_string(by) + "' needs the '" +
                              to_string(needed) + "' checkpoint (" + path + "); run 'sma train " +
                              to_string(needed) + "' first");
  }
  return load_checkpoint(path);
}

std::optional<Checkpoint> optional_checkpoint(const Config& cfg, Stage s) {
  const std::string path = checkpoint_path(cfg, s);
  if (!fs::exists(path)) return std::nullopt;
  return load_checkpoint(path);
}

json phase2_json(const pipeline::Phase2Report& r) {
  json j;
  j["baseline_mse"] = r.baseline_mse;
  j["holdout_mse"] = r.holdout_mse;
  j["train_mse"] = r.train_mse;
  j["ratio"] = r.holdout_mse / r.baseline_mse;
  j["target_variance"] = r.target_variance;
  j["train_samples"] = r.train_samples;
  j["holdout_samples"] = r.holdout_samples;
  j["frozen_checksum_before"] = std::to_string(r.checksum_before);
  j["frozen_checksum_after"] = std::to_string(r.checksum_after);
  return j;
}

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kPhase1: return "phase1";
    case Stage::kPhase2: return "phase2";
    case Stage::kRma: return "rma";
    case Stage::kRoa: return "roa";
    case Stage::kPlastic: return "plastic";
  }
  return "pretrain";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : all_stages()) {
    if (s == to_string(st)) return st;
  }
  throw ContractError("unknown stage '" + s + "' (pretrain | phase1 | phase2 | rma | roa | plastic)");
}

std::vector<Stage> all_stages() {
  return {Stage::kPretrain, Stage::kPhase1, Stage::kPhase2, Stage::kRma, Stage::kRoa,
          Stage::kPlastic};
}

bool prerequisite(Stage s, Stage* out) {
  switch (s) {
    case Stage::kPretrain: return false;
    case Stage::kPhase2: *out = Stage::kPhase1; return true;
    default: *out = Stage::kPretrain; return true;
  }
}

std::string checkpoint_path(const Config& cfg, Stage s) {
  return path_in(cfg.out, std::string(to_string(s)) + ".ckpt");
}

std::string metrics_path(const std::string& dir, Stage s) {
  return path_in(dir, std::string(to_string(s)) + ".metrics.jsonl");
}

std::string config_echo_path(const std::string& dir) { return path_in(dir, "config.cfg"); }

void cmd_train(const Config& cfg, Stage stage, bool dry_run, std::ostream& log) {
  cfg.validate();
  if (dry_run) {
    log << "# stage " << to_string(stage) << ", resolved configuration\n" << to_text(cfg);
    return;
  }
  std::optional<Checkpoint> prior;
  Stage pre;
  if (prerequisite(stage, &pre)) prior = require_checkpoint(cfg, pre, stage);

  fs::create_directories(cfg.out);
  write_file(config_echo_path(cfg.out), to_text(cfg));
  MetricsWriter writer(metrics_path(cfg.out, stage), to_string(stage));
  pipeline::StageIo io;
  io.metrics = [&](const pipeline::Record& r) { writer.write(r); };
  io.log = [&](const std::string& s) { log << s << "\n" << std::flush; };
  io.on_abort = [&](const Model& m) {
    const std::string p = path_in(cfg.out, std::string(to_string(stage)) + ".lastgood.ckpt");
    save_checkpoint(p, m, std::string(to_string(stage)) + ".lastgood");
    log << "last good parameters written to " << p << "\n";
  };

  json report;
  report["stage"] = to_string(stage);
  Model model;
  switch (stage) {
    case Stage::kPretrain: {
      pipeline::PretrainReport r;
      model = pipeline::pretrain_base(cfg, io, &r);
      report["eval_return"] = r.eval_return;
      report["threshold"] = r.threshold;
      report["reached"] = r.reached;
      break;
    }
    case Stage::kPhase1:
      model = pipeline::phase1_train(cfg, prior->model, io);
      break;
    case Stage::kPhase2: {
      require(prior->model.agent.kind == pipeline::AgentKind::kSma,
              "phase2: the phase1 checkpoint does not hold an SMA agent");
      pipeline::Phase2Report r;
      model = pipeline::phase2_train_estimator(cfg, prior->model, io, &r);
      report["regression"] = phase2_json(r);
      break;
    }
    case Stage::kRma: {
      pipeline::Phase2Report r;
      model = pipeline::rma_baseline_train(cfg, prior->model, io, &r);
      report["regression"] = phase2_json(r);
      break;
    }
    case Stage::kRoa:
      model = pipeline::roa_joint_train(cfg, prior->model, io);
      break;
    case Stage::kPlastic:
      model = pipeline::plastic_train(cfg, prior->model, io);
      break;
  }
  save_checkpoint(checkpoint_path(cfg, stage), model, to_string(stage),
                  {{"run.seed", std::to_string(cfg.seed)}});
  report["metrics_rows"] = writer.rows();
  write_file(path_in(cfg.out, std::string(to_string(stage)) + ".report.json"),
             report.dump(2) + "\n");
  log << to_string(stage) << ": wrote " << checkpoint_path(cfg, stage) << "\n";
}

void cmd_eval(const Config& cfg, bool dry_run, std::ostream& log) {
  cfg.validate();
  if (dry_run) {
    log << "# eval, resolved configuration\n" << to_text(cfg);
    return;
  }
  const Checkpoint base = require_checkpoint(cfg, Stage::kPretrain, Stage::kPretrain);
  const auto plastic = optional_checkpoint(cfg, Stage::kPlastic);
  const auto rma = optional_checkpoint(cfg, Stage::kRma);
  const auto roa = optional_checkpoint(cfg, Stage::kRoa);
  auto sma = optional_checkpoint(cfg, Stage::kPhase2);
  const auto sma_expert = sma ? sma : optional_checkpoint(cfg, Stage::kPhase1);

  auto ptr = [](const std::optional<Checkpoint>& c) { return c ? &c->model : nullptr; };
  const std::vector<pipeline::SuitePolicy> policies{
      {"Non-Adaptive SNN", &base.model, Adapter::kNone},
      {"Plastic SNN", ptr(plastic), Adapter::kNone},
      {"RMA", ptr(rma), Adapter::kEstimator},
      {"SMA", ptr(sma), Adapter::kEstimator},
      {"RMA Expert", ptr(rma), Adapter::kExpert},
      {"SMA Expert", ptr(sma_expert), Adapter::kExpert},
      {"ROA", ptr(roa), Adapter::kEstimator},
  };

  pipeline::SuiteSpec spec;
  spec.env = pipeline::train_env(cfg);
  spec.env.max_episode_len = cfg.eval_episode_len;
  spec.reference = cfg.env.ranges;
  spec.grid = cfg.eval_grid;
  spec.episodes = cfg.eval_episodes;
  spec.seeds = cfg.eval_seeds;
  spec.noise_max = cfg.eval_noise_max;
  spec.seed = pipeline::stage_seed(cfg.seed, "eval");
  const auto result = pipeline::evaluate_suite(policies, spec);
  for (const auto& w : result.warnings) log << "warning: " << w << "\n";

  const std::string dir = path_in(cfg.out, "eval");
  fs::create_directories(dir);
  write_file(config_echo_path(cfg.out), to_text(cfg));
  const std::string table = pipeline::format_table(result);
  write_file(path_in(dir, "table.txt"), table);
  log << table;

  std::string cells;
  for (const auto& c : result.cells) {
    json j;
    j["policy"] = c.policy;
    j["axis"] = pipeline::to_string(c.axis);
    j["mean"] = c.mean;
    j["ci95"] = c.ci95;
    j["per_seed"] = std::vector<double>(c.per_seed.data(), c.per_seed.data() + c.per_seed.size());
    cells += j.dump() + "\n";
  }
  write_file(path_in(dir, "results.jsonl"), cells);

  std::ofstream eps(path_in(dir, "episodes.jsonl"), std::ios::trunc);
  for (const auto& e : result.episodes) {
    json j;
    j["policy"] = e.policy;
    j["axis"] = pipeline::to_string(e.axis);
    j["seed"] = e.seed_index;
    j["point"] = e.point;
    j["value"] = e.value;
    j["prob"] = e.prob;
    j["episode"] = e.episode;
    j["return"] = e.result.ret;
    j["length"] = e.result.length;
    j["failed"] = e.result.failed;
    eps << j.dump() << "\n";
  }
  log << "eval: wrote " << dir << "\n";
}

void cmd_plot(const std::string& run_dir, std::ostream& log) {
  if (!fs::is_directory(run_dir)) throw ContractError("run directory '" + run_dir + "' not found");
  std::map<Stage, MetricsStream> streams;
  std::size_t rows = 0;
  for (Stage s : all_stages()) {
    const std::string p = metrics_path(run_dir, s);
    if (!fs::exists(p)) continue;
    streams[s] = read_metrics(p);
    rows += streams[s].rows.size();
  }
  if (rows == 0) throw ContractError("no metrics rows under '" + run_dir + "'; nothing to plot");

  const std::string dir = path_in(run_dir, "plots");
  fs::create_directories(dir);
  for (const auto& [stage, stream] : streams) {
    std::vector<Series> series;
    for (const char* key : {"mean_reward", "train_mse", "holdout_mse"}) {
      Series s{key, {}, {}};
      for (const auto& row : stream.rows) {
        for (const auto& [k, v] : row) {
          if (k == key) {
            s.x.push_back(static_cast<double>(s.x.size()));
            s.y.push_back(v);
          }
        }
      }
      if (!s.x.empty()) series.push_back(std::move(s));
    }
    if (series.empty()) continue;
    const std::string out = path_in(dir, std::string(to_string(stage)) + "_curve.svg");
    write_file(out, svg_lines(std::string(to_string(stage)) + " learning curve", "update / epoch",
                              "value", series));
    log << "wrote " << out << "\n";
  }

  // Diagnostics that need the trained SMA agent.
  const std::string echo = config_echo_path(run_dir);
  if (!fs::exists(echo)) return;
  const Config cfg = load_config("", echo, nullptr);
  std::optional<Checkpoint> sma;
  for (Stage s : {Stage::kPhase2, Stage::kPhase1}) {
    const std::string p = path_in(run_dir, std::string(to_string(s)) + ".ckpt");
    if (fs::exists(p)) {
      sma = load_checkpoint(p);
      break;
    }
  }
  if (!sma) return;
  const env::TestbedConfig env_cfg = pipeline::train_env(cfg);
  const auto& ref = cfg.env.ranges;
  pipeline::Agent agent(sma->model.agent);
  const int steps = std::min(200, cfg.eval_episode_len);

  std::vector<Series> traces;
  const bool has_estimator = sma->stage() == "phase2";
  for (Adapter a : {Adapter::kExpert, Adapter::kEstimator}) {
    if (a == Adapter::kEstimator && !has_estimator) continue;
    agent.set_adapter(a);
    std::vector<pipeline::EpisodeSpec> specs(3);
    const double gains[] = {ref.motor_gain.lo, ref.motor_gain.mid(), ref.motor_gain.hi};
    for (int i = 0; i < 3; ++i) specs[i].ext.motor_gain = gains[i];
    const auto tr = pipeline::adapter_traces(agent, sma->model.params, env_cfg, ref, specs, steps,
                                             pipeline::stage_seed(cfg.seed, "plot.traces"));
    for (int i = 0; i < 3; ++i) {
      Series s{std::string(a == Adapter::kExpert ? "expert" : "estimator") + " gain " +
                   std::to_string(gains[i]).substr(0, 4),
               {}, {}};
      for (int t = 0; t < steps; ++t) {
        s.x.push_back(t);
        s.y.push_back(tr[i].col(t).mean());
      }
      traces.push_back(std::move(s));
    }
  }
  const std::string trace_file = path_in(dir, "modulators.svg");
  write_file(trace_file, svg_lines("mean modulator per step", "step", "modulator", traces));
  log << "wrote " << trace_file << "\n";

  agent.set_adapter(Adapter::kExpert);
  const std::string wname = agent.policy().weight_name(sma->model.agent.policy.plastic_layer);
  const Mat w0 = sma->model.params[wname];
  pipeline::EpisodeSpec spec;
  spec.noise_scale = cfg.env.noise.scale;
  const Mat offset =
      pipeline::plastic_offset_after(agent, sma->model.params, env_cfg, ref, spec,
                                     cfg.eval_episode_len, pipeline::stage_seed(cfg.seed, "plot.w"));
  const Mat w1 = w0 + offset;
  const std::vector<double> a(w0.data(), w0.data() + w0.size());
  const std::vector<double> b(w1.data(), w1.data() + w1.size());
  const std::string hist_file = path_in(dir, "plastic_weights.svg");
  write_file(hist_file, svg_histogram("plastic layer weights", "weight",
                                      {{"start of episode", histogram(a, 40)},
                                       {"end of episode", histogram(b, 40)}}));
  log << "wrote " << hist_file << "\n";
}

}  // namespace sma::harness
