#include "sma/harness/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "sma/common.hpp"

namespace sma::harness {
namespace {

constexpr double kW = 720, kH = 420, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                               "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", x);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

void widen(double& lo, double& hi) {
  if (!(hi > lo)) {
    const double pad = std::abs(lo) > 0 ? 0.5 * std::abs(lo) : 0.5;
    lo -= pad;
    hi += pad;
  }
}

std::string header(const std::string& title, const std::string& xlabel,
                   const std::string& ylabel, const Frame& f) {
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" +
       num(kH) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kW / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
       escape(title) + "</text>\n";
  const double xa = kLeft, xb = kW - kRight, ya = kTop, yb = kH - kBottom;
  s += "<rect x=\"" + num(xa) + "\" y=\"" + num(ya) + "\" width=\"" + num(xb - xa) +
       "\" height=\"" + num(yb - ya) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double u = i / 4.0;
    const double xv = f.x0 + u * (f.x1 - f.x0), yv = f.y0 + u * (f.y1 - f.y0);
    s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(yb + 16) +
         "\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
    s += "<text x=\"" + num(xa - 6) + "\" y=\"" + num(f.py(yv) + 4) +
         "\" text-anchor=\"end\">" + num(yv) + "</text>\n";
  }
  s += "<text x=\"" + num((xa + xb) / 2) + "\" y=\"" + num(kH - 10) +
       "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text x=\"16\" y=\"" + num((ya + yb) / 2) + "\" transform=\"rotate(-90 16 " +
       num((ya + yb) / 2) + ")\" text-anchor=\"middle\">" + escape(ylabel) + "</text>\n";
  return s;
}

std::string legend(int i, const std::string& name) {
  const double x = kW - kRight + 12, y = kTop + 14 + 18 * i;
  return "<rect x=\"" + num(x) + "\" y=\"" + num(y - 9) + "\" width=\"12\" height=\"10\" fill=\"" +
         kColors[i % 8] + "\"/><text x=\"" + num(x + 18) + "\" y=\"" + num(y) + "\">" +
         escape(name) + "</text>\n";
}

}  // namespace

std::string svg_lines(const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "svg_lines: series '" + s.name + "' has ragged data");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  require(std::isfinite(x0), "svg_lines: nothing to plot");
  widen(x0, x1);
  widen(y0, y1);
  const Frame f{x0, x1, y0, y1};
  std::string svg = header(title, xlabel, ylabel, f);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts += num(f.px(s.x[i])) + "," + num(f.py(s.y[i])) + " ";
    }
    svg += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" +
           std::string(kColors[k % 8]) + "\" points=\"" + pts + "\"/>\n";
    svg += legend(static_cast<int>(k), s.name);
  }
  return svg + "</svg>\n";
}

long Histogram::total() const {
  long t = 0;
  for (long c : counts) t += c;
  return t;
}

Histogram histogram(const std::vector<double>& values, int bins) {
  require(bins > 0, "histogram: need at least one bin");
  require(!values.empty(), "histogram: no values");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  require(std::isfinite(*mn) && std::isfinite(*mx), "histogram: non-finite value");
  Histogram h;
  if (*mn == *mx) {
    h.edges = {*mn, *mx};
    h.counts = {static_cast<long>(values.size())};
    return h;
  }
  const double lo = *mn, hi = *mx, w = (hi - lo) / bins;
  for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + i * w);
  h.counts.assign(bins, 0);
  for (double v : values) {
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / w));
    ++h.counts[b];
  }
  return h;
}

std::string svg_histogram(const std::string& title, const std::string& xlabel,
                          const std::vector<std::pair<std::string, Histogram>>& hists) {
  require(!hists.empty(), "svg_histogram: nothing to plot");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y1 = 0.0;
  for (const auto& [name, h] : hists) {
    x0 = std::min(x0, h.edges.front());
    x1 = std::max(x1, h.edges.back());
    for (long c : h.counts) y1 = std::max(y1, static_cast<double>(c) / h.total());
  }
  widen(x0, x1);
  const Frame f{x0, x1, 0.0, y1 > 0 ? y1 : 1.0};
  std::string svg = header(title, xlabel, "fraction", f);
  for (std::size_t k = 0; k < hists.size(); ++k) {
    const Histogram& h = hists[k].second;
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      double a = f.px(h.edges[b]), z = f.px(h.edges[b + 1]);
      if (z - a < 2.0) {  // single-bin mass on a degenerate range
        a -= 1.0;
        z += 1.0;
      }
      const double top = f.py(static_cast<double>(h.counts[b]) / h.total());
      svg += "<rect class=\"bin\" x=\"" + num(a) + "\" y=\"" + num(top) + "\" width=\"" +
             num(z - a) + "\" height=\"" + num(f.py(0.0) - top) + "\" fill=\"" +
             kColors[k % 8] + "\" fill-opacity=\"0.5\"/>\n";
    }
    svg += legend(static_cast<int>(k), hists[k].first);
  }
  return svg + "</svg>\n";
}

int polyline_points(const std::string& svg, int index) {
  std::size_t pos = 0;
  for (int i = 0; i <= index; ++i) {
    pos = svg.find("<polyline", pos);
    if (pos == std::string::npos) return -1;
    if (i < index) ++pos;
  }
  const std::size_t a = svg.find("points=\"", pos) + 8;
  const std::size_t b = svg.find('"', a);
  int n = 0;
  for (std::size_t i = a; i < b; ++i) n += svg[i] == ',';
  return n;
}

}  // namespace sma::harness
