#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace d2ip::cli {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  /// Draw each series as a staircase (value held until the next x).
  bool step = false;
};

/// Renders a line chart with axes, ticks and a legend to an RGB PNG.
/// Non-finite points (and non-positive ones on a log axis) are skipped.
void write_line_plot(const std::filesystem::path& path, const PlotSpec& spec,
                     std::span<const Series> series);

}  // namespace d2ip::cli
