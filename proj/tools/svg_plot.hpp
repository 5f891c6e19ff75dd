#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace marginnet::tools {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
};

/// Single polyline with axes, tick labels and a title.
void write_line_plot(std::ostream& os, const Series& series, const std::string& title, const std::string& x_label,
                     const std::string& y_label);

}  // namespace marginnet::tools
