// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace opflow {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// Static SVG figures; no external renderer needed.
std::string line_chart_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                           const std::vector<Series>& series);
std::string scatter_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                        const std::vector<Series>& series);
std::string heatmap_svg(const std::string& title, const std::vector<std::vector<double>>& grid);

}  // namespace opflow
