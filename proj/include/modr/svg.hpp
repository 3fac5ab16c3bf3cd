#pragma once

// Dependency-free SVG result plots: per-run cost series and planar state
// trajectories with constraint-box overlays.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace modr::svg {

struct Series {
  std::string name;
  std::string color;
  std::vector<std::pair<double, double>> points;
};

struct RectOverlay {
  double x0, y0, x1, y1;
  std::string color;
  std::string label;
};

namespace detail {

struct Frame {
  double xmin, xmax, ymin, ymax;
  static constexpr double w = 760, h = 480, ml = 70, mr = 20, mt = 40, mb = 50;
  double px(double x) const { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); }
  double py(double y) const { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); }
};

inline Frame fit(const std::vector<Series>& series, const std::vector<RectOverlay>& rects) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  for (const auto& r : rects) {
    xmin = std::min(xmin, r.x0);
    xmax = std::max(xmax, r.x1);
    ymin = std::min(ymin, r.y0);
    ymax = std::max(ymax, r.y1);
  }
  if (!(xmax > xmin)) xmax = xmin + 1;
  if (!(ymax > ymin)) ymax = ymin + 1;
  const double dx = 0.05 * (xmax - xmin), dy = 0.05 * (ymax - ymin);
  return Frame{xmin - dx, xmax + dx, ymin - dy, ymax + dy};
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace detail

inline std::string render(const std::string& title, const std::string& xlabel,
                          const std::string& ylabel, const std::vector<Series>& series,
                          const std::vector<RectOverlay>& rects = {}) {
  using detail::Frame;
  const Frame f = detail::fit(series, rects);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Frame::w << "\" height=\""
     << Frame::h << "\" viewBox=\"0 0 " << Frame::w << " " << Frame::h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << Frame::w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"16\">"
     << title << "</text>\n";

  // axes with five ticks per side
  os << "<g stroke=\"#444\" stroke-width=\"1\">";
  os << "<line x1=\"" << Frame::ml << "\" y1=\"" << Frame::h - Frame::mb << "\" x2=\""
     << Frame::w - Frame::mr << "\" y2=\"" << Frame::h - Frame::mb << "\"/>";
  os << "<line x1=\"" << Frame::ml << "\" y1=\"" << Frame::mt << "\" x2=\"" << Frame::ml
     << "\" y2=\"" << Frame::h - Frame::mb << "\"/></g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double tx = f.xmin + (f.xmax - f.xmin) * i / 4.0;
    const double ty = f.ymin + (f.ymax - f.ymin) * i / 4.0;
    os << "<text x=\"" << f.px(tx) << "\" y=\"" << Frame::h - Frame::mb + 18
       << "\" text-anchor=\"middle\" font-size=\"11\">" << detail::tick_label(tx) << "</text>\n";
    os << "<text x=\"" << Frame::ml - 8 << "\" y=\"" << f.py(ty) + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << detail::tick_label(ty) << "</text>\n";
  }
  os << "<text x=\"" << (Frame::ml + Frame::w - Frame::mr) / 2 << "\" y=\"" << Frame::h - 12
     << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel << "</text>\n";
  os << "<text x=\"18\" y=\"" << (Frame::mt + Frame::h - Frame::mb) / 2
     << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
     << (Frame::mt + Frame::h - Frame::mb) / 2 << ")\">" << ylabel << "</text>\n";

  for (const auto& r : rects) {
    os << "<rect x=\"" << f.px(r.x0) << "\" y=\"" << f.py(r.y1) << "\" width=\""
       << f.px(r.x1) - f.px(r.x0) << "\" height=\"" << f.py(r.y0) - f.py(r.y1)
       << "\" fill=\"none\" stroke=\"" << r.color << "\" stroke-dasharray=\"6 4\"/>\n";
    if (!r.label.empty())
      os << "<text x=\"" << f.px(r.x0) + 6 << "\" y=\"" << f.py(r.y1) + 16 << "\" font-size=\"11\" fill=\""
         << r.color << "\">" << r.label << "</text>\n";
  }

  int legend_y = static_cast<int>(Frame::mt) + 8;
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.6\" points=\"";
    for (auto [x, y] : s.points) os << f.px(x) << "," << f.py(y) << " ";
    os << "\"/>\n";
    if (!s.name.empty()) {
      os << "<line x1=\"" << Frame::w - 190 << "\" y1=\"" << legend_y << "\" x2=\"" << Frame::w - 165
         << "\" y2=\"" << legend_y << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>";
      os << "<text x=\"" << Frame::w - 158 << "\" y=\"" << legend_y + 4 << "\" font-size=\"12\">"
         << s.name << "</text>\n";
      legend_y += 18;
    }
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("svg: cannot open " + path);
  f << body;
}

}  // namespace modr::svg
