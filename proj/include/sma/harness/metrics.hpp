#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "sma/pipeline/stages.hpp"

namespace sma::harness {

// Line-delimited JSON. The first line is a header
//   {"format":"sma-metrics","version":1,"stage":...}
// followed by one object per update with keys in a fixed order. Non-finite
// values are written as null. Every line is flushed as it is written.
inline constexpr const char* kMetricsFormat = "sma-metrics";
inline constexpr int kMetricsVersion = 1;

class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, const std::string& stage);
  void write(const pipeline::Record& r);
  int rows() const { return rows_; }

 private:
  std::ofstream out_;
  int rows_ = 0;
};

std::string record_json(const pipeline::Record& r);

struct MetricsStream {
  std::string stage;
  std::vector<pipeline::Record> rows;  // null values read back as NaN

  // Values of one key, in row order.
  std::vector<double> column(const std::string& key) const;
};

// Throws ContractError on a missing file, bad header or malformed row.
MetricsStream read_metrics(const std::string& path);

}  // namespace sma::harness
