// SPDX-License-Identifier: Apache-2.0
#include "opflow/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "opflow/util.hpp"

namespace opflow {

namespace {

constexpr double kW = 640, kH = 420, kL = 80, kR = 150, kT = 40, kB = 60;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string tick(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kL + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (kW - kL - kR); }
  double py(double y) const { return kH - kB - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (kH - kT - kB); }
};

std::string chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                  const std::vector<Series>& series, bool lines) {
  Frame f{std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest(), 0.0,
          std::numeric_limits<double>::lowest()};
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ValidationError("series '" + s.name + "' has mismatched x/y lengths");
    for (size_t i = 0; i < s.x.size(); ++i) {
      f.x0 = std::min(f.x0, s.x[i]);
      f.x1 = std::max(f.x1, s.x[i]);
      f.y0 = std::min(f.y0, s.y[i]);
      f.y1 = std::max(f.y1, s.y[i]);
    }
  }
  if (f.x0 > f.x1) f.x0 = 0, f.x1 = 1;
  if (f.y1 <= f.y0) f.y1 = f.y0 + 1;
  f.y1 *= 1.05;

  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" + num(kH) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(kW / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + esc(title) + "</text>\n";
  o += "<line x1=\"" + num(kL) + "\" y1=\"" + num(kH - kB) + "\" x2=\"" + num(kW - kR) + "\" y2=\"" + num(kH - kB) +
       "\" stroke=\"black\"/>\n";
  o += "<line x1=\"" + num(kL) + "\" y1=\"" + num(kT) + "\" x2=\"" + num(kL) + "\" y2=\"" + num(kH - kB) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    o += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(kH - kB + 16) + "\" text-anchor=\"middle\">" + tick(xv) +
         "</text>\n";
    o += "<text x=\"" + num(kL - 6) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\">" + tick(yv) +
         "</text>\n";
  }
  o += "<text x=\"" + num((kL + kW - kR) / 2) + "\" y=\"" + num(kH - 18) + "\" text-anchor=\"middle\">" +
       esc(xlabel) + "</text>\n";
  o += "<text transform=\"translate(16," + num((kT + kH - kB) / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       esc(ylabel) + "</text>\n";
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string color = kColors[k % 6];
    if (lines && s.x.size() > 1) {
      o += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) o += num(f.px(s.x[i])) + "," + num(f.py(s.y[i])) + " ";
      o += "\"/>\n";
    }
    for (size_t i = 0; i < s.x.size(); ++i)
      o += "<circle cx=\"" + num(f.px(s.x[i])) + "\" cy=\"" + num(f.py(s.y[i])) + "\" r=\"4\" fill=\"" + color +
           "\"/>\n";
    double ly = kT + 18.0 * static_cast<double>(k);
    o += "<rect x=\"" + num(kW - kR + 12) + "\" y=\"" + num(ly) + "\" width=\"12\" height=\"12\" fill=\"" + color +
         "\"/>\n";
    o += "<text x=\"" + num(kW - kR + 30) + "\" y=\"" + num(ly + 10) + "\">" + esc(s.name) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                           const std::vector<Series>& series) {
  return chart(title, xlabel, ylabel, series, true);
}

std::string scatter_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                        const std::vector<Series>& series) {
  return chart(title, xlabel, ylabel, series, false);
}

std::string heatmap_svg(const std::string& title, const std::vector<std::vector<double>>& grid) {
  size_t rows = grid.size(), cols = rows ? grid[0].size() : 0;
  double mx = 0;
  for (const auto& r : grid) {
    if (r.size() != cols) throw ValidationError("heatmap rows differ in length");
    for (double v : r) mx = std::max(mx, v);
  }
  const double cell = std::clamp(480.0 / std::max<size_t>({rows, cols, 1}), 2.0, 24.0);
  const double w = 60 + cell * static_cast<double>(cols) + 20, h = 40 + cell * static_cast<double>(rows) + 20;
  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(w / 2) + "\" y=\"22\" text-anchor=\"middle\">" + esc(title) + " (max " + tick(mx) +
       ")</text>\n";
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) {
      double t = mx > 0 ? grid[i][j] / mx : 0.0;
      int shade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
      char color[16];
      std::snprintf(color, sizeof color, "#ff%02x%02x", shade, shade);
      o += "<rect x=\"" + num(60 + cell * static_cast<double>(j)) + "\" y=\"" + num(40 + cell * static_cast<double>(i)) +
           "\" width=\"" + num(cell) + "\" height=\"" + num(cell) + "\" fill=\"" + color + "\"/>\n";
    }
  o += "<text x=\"10\" y=\"" + num(40 + cell * static_cast<double>(rows) / 2) + "\">token</text>\n";
  o += "</svg>\n";
  return o;
}

}  // namespace opflow
