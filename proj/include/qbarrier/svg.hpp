// Line charts as static SVG, derived purely from already-written CSV data.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "qbarrier/errors.hpp"

namespace qb {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band;  // optional symmetric half-width around y
};

inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             const std::vector<PlotSeries>& series) {
  const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size(); ++i) {
      double lo = s.y[i], hi = s.y[i];
      if (!s.band.empty()) {
        lo -= s.band[i];
        hi += s.band[i];
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, lo);
      ymax = std::max(ymax, hi);
    }
  }
  if (xmin > xmax) { xmin = 0; xmax = 1; }
  if (ymin > ymax) { ymin = 0; ymax = 1; }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) { ymax += 0.5; ymin -= 0.5; }
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b"};
  std::ofstream f(path);
  if (!f) throw ConfigError("write_line_chart: cannot open " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
    << "' viewBox='0 0 " << W << " " << H << "'>\n";
  f << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  f << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15' "
       "font-family='sans-serif'>" << title << "</text>\n";
  // Axes.
  f << "<line x1='" << L << "' y1='" << T << "' x2='" << L << "' y2='" << H - B
    << "' stroke='black'/>\n";
  f << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R << "' y2='" << H - B
    << "' stroke='black'/>\n";
  for (int i = 0; i <= 5; ++i) {
    double xv = xmin + (xmax - xmin) * i / 5.0;
    double yv = ymin + (ymax - ymin) * i / 5.0;
    char bx[32], by[32];
    std::snprintf(bx, sizeof(bx), "%.3g", xv);
    std::snprintf(by, sizeof(by), "%.3g", yv);
    f << "<text x='" << px(xv) << "' y='" << H - B + 18
      << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << bx
      << "</text>\n";
    f << "<text x='" << L - 8 << "' y='" << py(yv) + 4
      << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << by
      << "</text>\n";
    f << "<line x1='" << L << "' y1='" << py(yv) << "' x2='" << W - R << "' y2='"
      << py(yv) << "' stroke='#dddddd' stroke-width='0.5'/>\n";
  }
  f << "<text x='" << (L + W - R) / 2 << "' y='" << H - 12
    << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << x_label
    << "</text>\n";
  f << "<text x='16' y='" << (T + H - B) / 2
    << "' text-anchor='middle' font-size='12' font-family='sans-serif' "
       "transform='rotate(-90 16 " << (T + H - B) / 2 << ")'>" << y_label
    << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const PlotSeries& s = series[si];
    const char* color = colors[si % 6];
    if (!s.band.empty() && s.x.size() > 1) {
      f << "<polygon fill='" << color << "' fill-opacity='0.15' stroke='none' points='";
      for (size_t i = 0; i < s.x.size(); ++i)
        f << px(s.x[i]) << "," << py(s.y[i] + s.band[i]) << " ";
      for (size_t i = s.x.size(); i-- > 0;)
        f << px(s.x[i]) << "," << py(s.y[i] - s.band[i]) << " ";
      f << "'/>\n";
    }
    f << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='";
    for (size_t i = 0; i < s.x.size(); ++i) f << px(s.x[i]) << "," << py(s.y[i]) << " ";
    f << "'/>\n";
    double ly = T + 16 + 16 * static_cast<double>(si);
    f << "<line x1='" << W - R - 130 << "' y1='" << ly << "' x2='" << W - R - 106
      << "' y2='" << ly << "' stroke='" << color << "' stroke-width='2'/>\n";
    f << "<text x='" << W - R - 100 << "' y='" << ly + 4
      << "' font-size='11' font-family='sans-serif'>" << s.name << "</text>\n";
  }
  f << "</svg>\n";
}

}  // namespace qb
