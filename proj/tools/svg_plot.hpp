// SPDX-License-Identifier: Apache-2.0
/**
 * @file   svg_plot.hpp
 * @brief  Minimal SVG line charts for training curves.
 */
#ifndef CFNSR_TOOLS_SVG_PLOT_HPP_
#define CFNSR_TOOLS_SVG_PLOT_HPP_

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

namespace cfnsr::tools {

struct Series {
  std::string label;
  std::string colour;
  std::vector<double> y; // one value per epoch, x = 1..n
};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// One chart with a shared y range, axes labelled at the extremes.
inline std::string line_chart(const std::string &title,
                              const std::vector<Series> &series) {
  constexpr double W = 480, H = 300, L = 50, R = 120, T = 30, B = 40;
  double lo = 0.0, hi = 1.0;
  std::size_t n = 1;
  for (const auto &s : series)
    for (double v : s.y) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      n = std::max(n, s.y.size());
    }
  auto px = [&](std::size_t i) {
    return L + (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0) *
                   (W - L - R);
  };
  auto py = [&](double v) { return T + (hi - v) / (hi - lo) * (H - T - B); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) +
                    "\" height=\"" + num(H) + "\" font-family=\"sans-serif\" "
                    "font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(L) + "\" y=\"18\" font-size=\"13\">" + title + "</text>\n";
  svg += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) +
         "\" y2=\"" + num(H - B) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) +
         "\" y2=\"" + num(H - B) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + num(L - 5) + "\" y=\"" + num(T + 4) +
         "\" text-anchor=\"end\">" + num(hi) + "</text>\n";
  svg += "<text x=\"" + num(L - 5) + "\" y=\"" + num(H - B + 4) +
         "\" text-anchor=\"end\">" + num(lo) + "</text>\n";
  svg += "<text x=\"" + num(L) + "\" y=\"" + num(H - B + 16) + "\">1</text>\n";
  svg += "<text x=\"" + num(W - R) + "\" y=\"" + num(H - B + 16) +
         "\" text-anchor=\"end\">" + std::to_string(n) + "</text>\n";
  svg += "<text x=\"" + num((W - R + L) / 2) + "\" y=\"" + num(H - 8) +
         "\" text-anchor=\"middle\">epoch</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto &s = series[k];
    std::string pts;
    for (std::size_t i = 0; i < s.y.size(); ++i)
      pts += (i ? " " : "") + num(px(i)) + "," + num(py(s.y[i]));
    svg += "<polyline fill=\"none\" stroke=\"" + s.colour +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = T + 14.0 * static_cast<double>(k);
    svg += "<line x1=\"" + num(W - R + 10) + "\" y1=\"" + num(ly) + "\" x2=\"" +
           num(W - R + 25) + "\" y2=\"" + num(ly) + "\" stroke=\"" + s.colour +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(W - R + 30) + "\" y=\"" + num(ly + 4) + "\">" +
           s.label + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

} // namespace cfnsr::tools

#endif // CFNSR_TOOLS_SVG_PLOT_HPP_
