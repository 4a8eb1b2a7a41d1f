#include "cli/svg.hpp"

#include <algorithm>
#include <cstdio>

#include "whitenseq/errors.hpp"

namespace whitenseq::cli {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 610, kTop = 50, kBottom = 350;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<double>& xs,
                       const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.empty()) {
    throw ShapeError("line_chart needs matching non-empty series");
  }
  double x_min = xs[0], x_max = xs[0], y_min = ys[0], y_max = ys[0];
  for (std::size_t i = 1; i < xs.size(); ++i) {
    x_min = std::min(x_min, xs[i]);
    x_max = std::max(x_max, xs[i]);
    y_min = std::min(y_min, ys[i]);
    y_max = std::max(y_max, ys[i]);
  }
  if (x_max == x_min) x_max = x_min + 1.0;
  if (y_max == y_min) y_max = y_min + 1.0;

  auto px = [&](double x) {
    return kLeft + (x - x_min) / (x_max - x_min) * (kRight - kLeft);
  };
  auto py = [&](double y) {
    return kBottom - (y - y_min) / (y_max - y_min) * (kBottom - kTop);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) +
         "\" height=\"" + fmt(kHeight) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"28\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">" + title + "</text>\n";
  svg += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kBottom) + "\" x2=\"" +
         fmt(kRight) + "\" y2=\"" + fmt(kBottom) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" +
         fmt(kLeft) + "\" y2=\"" + fmt(kBottom) + "\" stroke=\"black\"/>\n";

  svg += "<text x=\"" + fmt((kLeft + kRight) / 2) + "\" y=\"" + fmt(kBottom + 36) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
         x_label + "</text>\n";
  svg += "<text x=\"18\" y=\"" + fmt((kTop + kBottom) / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 18 " + fmt((kTop + kBottom) / 2) + ")\">" +
         y_label + "</text>\n";

  svg += "<text x=\"" + fmt(kLeft) + "\" y=\"" + fmt(kBottom + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
         fmt(x_min) + "</text>\n";
  svg += "<text x=\"" + fmt(kRight) + "\" y=\"" + fmt(kBottom + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
         fmt(x_max) + "</text>\n";
  svg += "<text x=\"" + fmt(kLeft - 8) + "\" y=\"" + fmt(kBottom + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
         fmt(y_min) + "</text>\n";
  svg += "<text x=\"" + fmt(kLeft - 8) + "\" y=\"" + fmt(kTop + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
         fmt(y_max) + "</text>\n";

  svg += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) svg += ' ';
    svg += fmt(px(xs[i])) + "," + fmt(py(ys[i]));
  }
  svg += "\"/>\n</svg>\n";
  return svg;
}

}  // namespace whitenseq::cli
