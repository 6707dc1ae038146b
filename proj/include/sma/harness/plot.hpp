#pragma once

#include <string>
#include <vector>

namespace sma::harness {

struct Series {
  std::string name;
  std::vector<double> x, y;  // non-finite points are skipped
};

// Standalone SVG line chart; each series becomes one <polyline>.
std::string svg_lines(const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<long> counts;
  long total() const;
};

// Equal-width bins over [min, max]. A constant sample collapses to a single
// bin holding all the mass.
Histogram histogram(const std::vector<double>& values, int bins);

std::string svg_histogram(const std::string& title, const std::string& xlabel,
                          const std::vector<std::pair<std::string, Histogram>>& hists);

// Number of points in the n-th polyline of an SVG produced above.
int polyline_points(const std::string& svg, int index = 0);

}  // namespace sma::harness
