#pragma once

#include <string>
#include <vector>

namespace whitenseq::cli {

// Minimal single-series line chart: axes, polyline, endpoint tick labels.
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<double>& xs,
                       const std::vector<double>& ys);

}  // namespace whitenseq::cli
