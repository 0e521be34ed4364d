#pragma once

#include <string>
#include <vector>

namespace d2::cli {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional symmetric error bars
};

// Standalone SVG line chart with error bars.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const Series& s);

}  // namespace d2::cli
