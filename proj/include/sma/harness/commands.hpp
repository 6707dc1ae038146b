#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sma/harness/config.hpp"

namespace sma::harness {

enum class Stage { kPretrain, kPhase1, kPhase2, kRma, kRoa, kPlastic };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);
std::vector<Stage> all_stages();  // dependency order
// Stage whose checkpoint must exist before `s` can run (none for pretrain).
bool prerequisite(Stage s, Stage* out);

// Run directory layout, all relative to Config::out.
std::string checkpoint_path(const Config& cfg, Stage s);     // <stage>.ckpt
std::string metrics_path(const std::string& dir, Stage s);   // <stage>.metrics.jsonl
std::string config_echo_path(const std::string& dir);        // config.cfg

class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs one stage: loads its prerequisite checkpoint, streams metrics, writes
// the stage checkpoint and report, and echoes the resolved config. With
// dry_run only the config is validated and printed.
void cmd_train(const Config& cfg, Stage stage, bool dry_run, std::ostream& log);

// Evaluates every available policy over all axes; writes eval/table.txt,
// eval/results.jsonl and eval/episodes.jsonl under the run directory.
void cmd_eval(const Config& cfg, bool dry_run, std::ostream& log);

// Learning curves, modulator traces and plastic-weight histograms as SVG
// under <run_dir>/plots. Throws if the run has no metrics rows.
void cmd_plot(const std::string& run_dir, std::ostream& log);

}  // namespace sma::harness
