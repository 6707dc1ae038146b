#include "sma/harness/metrics.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"

namespace sma::harness {

using json = nlohmann::ordered_json;

MetricsWriter::MetricsWriter(const std::string& path, const std::string& stage)
    : out_(path, std::ios::trunc) {
  if (!out_) throw ContractError("cannot write metrics '" + path + "'");
  json h;
  h["format"] = kMetricsFormat;
  h["version"] = kMetricsVersion;
  h["stage"] = stage;
  out_ << h.dump() << "\n" << std::flush;
}

std::string record_json(const pipeline::Record& r) {
  json j = json::object();
  for (const auto& [k, v] : r) {
    if (std::isfinite(v)) {
      j[k] = v;
    } else {
      j[k] = nullptr;
    }
  }
  return j.dump();
}

void MetricsWriter::write(const pipeline::Record& r) {
  out_ << record_json(r) << "\n" << std::flush;
  ++rows_;
}

std::vector<double> MetricsStream::column(const std::string& key) const {
  std::vector<double> out;
  for (const auto& row : rows) {
    for (const auto& [k, v] : row) {
      if (k == key) out.push_back(v);
    }
  }
  return out;
}

MetricsStream read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read metrics '" + path + "'");
  MetricsStream s;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw ContractError(path + ":" + std::to_string(lineno) + ": malformed record");
    }
    if (lineno == 1) {
      if (!j.is_object() || j.value("format", "") != kMetricsFormat ||
          j.value("version", 0) != kMetricsVersion) {
        throw ContractError(path + ": not a metrics stream (bad header)");
      }
      s.stage = j.value("stage", "");
      continue;
    }
    if (!j.is_object()) throw ContractError(path + ":" + std::to_string(lineno) + ": not an object");
    pipeline::Record r;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const double v = it->is_number() ? it->get<double>()
                                        : std::numeric_limits<double>::quiet_NaN();
      r.emplace_back(it.key(), v);
    }
    s.rows.push_back(std::move(r));
  }
  if (lineno == 0) throw ContractError(path + ": empty metrics stream");
  return s;
}

}  // namespace sma::harness
