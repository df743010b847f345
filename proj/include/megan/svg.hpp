#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace megan::svg {

struct Series {
  std::string name;
  std::vector<double> y;  // x is the index
};

/// Multi-series line plot with axes and a legend.
void write_line_plot(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series);

/// One panel per row of `signals` (a views x length record), laid out in a
/// 3x4 grid with per-panel labels.
void write_record_panels(const std::string& path, const Eigen::MatrixXf& signals, const std::string& title,
                         const std::vector<std::string>& panel_labels);

}  // namespace megan::svg
