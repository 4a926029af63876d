#ifndef OFM_SVG_HPP
#define OFM_SVG_HPP

// Static SVG plots: 2D sample clouds with trajectories, and loss curves.
// Every data series is a <g id="..."> layer, which keeps the output easy to
// inspect and to check in tests.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "ofm/core.hpp"
#include "ofm/metrics_log.hpp"

namespace ofm {

struct SvgLayer {
  std::string id;
  std::string color;
  Matrix points;                    // rows are 2D points (scatter layers)
  std::vector<Matrix> polylines;    // each matrix: rows are 2D vertices (path layers)
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Frame {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double size = 600, pad = 20;

  void include(double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    x0 = std::min(x0, x), x1 = std::max(x1, x);
    y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  double px(double x) const { return pad + (x - x0) / std::max(x1 - x0, 1e-12) * (size - 2 * pad); }
  double py(double y) const { return size - pad - (y - y0) / std::max(y1 - y0, 1e-12) * (size - 2 * pad); }
};

inline std::string svg_open(double w, double h) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return os.str();
}

}  // namespace detail

/// Scatter/trajectory plot of 2D layers on a shared, equal-aspect frame.
inline std::string scatter_svg(const std::vector<SvgLayer>& layers, const std::string& title = "") {
  detail::Frame f;
  bool first = true;
  auto add = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    if (first) f.x0 = f.x1 = x, f.y0 = f.y1 = y, first = false;
    f.include(x, y);
  };
  for (const auto& l : layers) {
    if (l.points.size() && l.points.cols() != 2) throw DimensionError("scatter_svg: layers must be 2-dimensional");
    for (Eigen::Index i = 0; i < l.points.rows(); ++i) add(l.points(i, 0), l.points(i, 1));
    for (const auto& p : l.polylines) {
      if (p.cols() != 2) throw DimensionError("scatter_svg: layers must be 2-dimensional");
      for (Eigen::Index i = 0; i < p.rows(); ++i) add(p(i, 0), p(i, 1));
    }
  }
  // equal aspect: widen the shorter side around its centre
  const double span = std::max(f.x1 - f.x0, f.y1 - f.y0);
  const double cx = 0.5 * (f.x0 + f.x1), cy = 0.5 * (f.y0 + f.y1);
  f.x0 = cx - 0.5 * span, f.x1 = cx + 0.5 * span, f.y0 = cy - 0.5 * span, f.y1 = cy + 0.5 * span;

  std::ostringstream os;
  os << detail::svg_open(f.size, f.size);
  if (!title.empty()) os << "<title>" << title << "</title>\n";
  for (const auto& l : layers) {
    os << "<g id=\"" << l.id << "\" data-count=\"" << (l.polylines.empty() ? l.points.rows() : Eigen::Index(l.polylines.size()))
       << "\">\n";
    for (const auto& p : l.polylines) {
      os << "<polyline fill=\"none\" stroke=\"" << l.color << "\" stroke-opacity=\"0.5\" stroke-width=\"0.8\" points=\"";
      for (Eigen::Index i = 0; i < p.rows(); ++i)
        os << (i ? " " : "") << detail::fmt(f.px(p(i, 0))) << ',' << detail::fmt(f.py(p(i, 1)));
      os << "\"/>\n";
    }
    for (Eigen::Index i = 0; i < l.points.rows(); ++i) {
      if (!std::isfinite(l.points(i, 0)) || !std::isfinite(l.points(i, 1))) continue;
      os << "<circle cx=\"" << detail::fmt(f.px(l.points(i, 0))) << "\" cy=\"" << detail::fmt(f.py(l.points(i, 1)))
         << "\" r=\"1.5\" fill=\"" << l.color << "\" fill-opacity=\"0.6\"/>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Loss curve of a metrics log against iteration. The y axis is logarithmic
/// when every logged loss is positive. Rows with a missing loss are counted
/// in data-rows but not drawn.
inline std::string loss_svg(const std::vector<MetricsRow>& rows, const std::string& title = "") {
  const double w = 640, h = 400, pad = 40;
  bool positive = true;
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) {
    if (!std::isfinite(r.loss)) continue;
    positive = positive && r.loss > 0.0;
    pts.emplace_back(static_cast<double>(r.iteration), r.loss);
  }
  if (positive)
    for (auto& p : pts) p.second = std::log10(p.second);
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts[0].first, y0 = y1 = pts[0].second;
    for (const auto& [x, y] : pts) x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  auto px = [&](double x) { return pad + (x - x0) / std::max(x1 - x0, 1e-12) * (w - 2 * pad); };
  auto py = [&](double y) { return h - pad - (y - y0) / std::max(y1 - y0, 1e-12) * (h - 2 * pad); };

  std::ostringstream os;
  os << detail::svg_open(w, h);
  if (!title.empty()) os << "<title>" << title << "</title>\n";
  os << "<g id=\"axes\" stroke=\"black\">\n<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad
     << "\" y2=\"" << h - pad << "\"/>\n<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\""
     << h - pad << "\"/>\n</g>\n";
  os << "<g id=\"labels\" font-size=\"11\" font-family=\"sans-serif\">\n";
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\">iteration</text>\n";
  os << "<text x=\"" << pad << "\" y=\"" << pad - 8 << "\">" << (positive ? "log10 loss" : "loss") << "</text>\n";
  os << "<text x=\"" << pad << "\" y=\"" << h - pad + 14 << "\">" << x0 << "</text>\n";
  os << "<text x=\"" << w - pad << "\" y=\"" << h - pad + 14 << "\" text-anchor=\"end\">" << x1 << "</text>\n";
  os << "</g>\n";
  os << "<g id=\"loss\" data-rows=\"" << rows.size() << "\">\n<polyline fill=\"none\" stroke=\"#1f77b4\" points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i)
    os << (i ? " " : "") << detail::fmt(px(pts[i].first)) << ',' << detail::fmt(py(pts[i].second));
  os << "\"/>\n</g>\n</svg>\n";
  return os.str();
}

}  // namespace ofm

#endif  // OFM_SVG_HPP
