#include "scenlat/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace scenlat {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string pca_scatter_svg(const Matrix& points2d, const std::vector<int>& groups,
                            const std::vector<std::string>& group_names, const std::string& title) {
  const double W = 520, H = 440, margin = 40, legend = 110;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!points2d.empty()) {
    xmin = xmax = points2d[0][0];
    ymin = ymax = points2d[0].size() > 1 ? points2d[0][1] : 0.0;
  }
  for (const auto& p : points2d) {
    xmin = std::min(xmin, p[0]);
    xmax = std::max(xmax, p[0]);
    const double y = p.size() > 1 ? p[1] : 0.0;
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  const double sx = (W - 2 * margin - legend) / std::max(1e-12, xmax - xmin);
  const double sy = (H - 2 * margin) / std::max(1e-12, ymax - ymin);

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << margin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << escape(title)
    << "</text>\n";
  o << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << W - 2 * margin - legend << "\" height=\""
    << H - 2 * margin << "\" fill=\"none\" stroke=\"#999\"/>\n";
  for (std::size_t i = 0; i < points2d.size(); ++i) {
    const double x = margin + (points2d[i][0] - xmin) * sx;
    const double y = H - margin - ((points2d[i].size() > 1 ? points2d[i][1] : 0.0) - ymin) * sy;
    const int g = i < groups.size() ? groups[i] : 0;
    o << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"2.5\" fill=\"" << kPalette[(g % 10 + 10) % 10]
      << "\" fill-opacity=\"0.7\"/>\n";
  }
  for (std::size_t g = 0; g < group_names.size(); ++g) {
    const double y = margin + 16.0 * static_cast<double>(g);
    o << "<circle cx=\"" << W - legend << "\" cy=\"" << y << "\" r=\"5\" fill=\"" << kPalette[g % 10] << "\"/>\n";
    o << "<text x=\"" << W - legend + 10 << "\" y=\"" << y + 4
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(group_names[g]) << "</text>\n";
  }
  o << "<text x=\"" << (W - legend) / 2 << "\" y=\"" << H - 10
    << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">PC 1</text>\n";
  o << "<text x=\"14\" y=\"" << H / 2 << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 "
    << H / 2 << ")\" text-anchor=\"middle\">PC 2</text>\n";
  o << "</svg>\n";
  return o.str();
}

std::string trajectory_svg(const Scenario& s, const TrajectoryPlotOptions& opt) {
  const double W = opt.width_px;
  const double scale = W / opt.lateral_extent;  // px per meter
  const double H = opt.longitudinal_extent * scale;
  auto px = [&](double x) { return W / 2 + x * scale; };
  auto py = [&](double y) { return H / 2 - y * scale; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(W) << "\" height=\"" << num(H + 20) << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"4\" y=\"" << num(H + 15) << "\" font-family=\"sans-serif\" font-size=\"11\">"
    << escape(s.scenario_id) << (s.label ? std::string(" (") + std::string(class_name(*s.label)) + ")" : "") << "</text>\n";
  for (int lane = -1; lane <= 1; lane += 2) {
    const double x = px(lane * 1.75);
    o << "<line x1=\"" << num(x) << "\" y1=\"0\" x2=\"" << num(x) << "\" y2=\"" << num(H)
      << "\" stroke=\"#ccc\" stroke-dasharray=\"6,6\"/>\n";
  }
  for (const auto& tr : s.trajectories)
    for (const auto& smp : tr.samples) {
      if (std::abs(smp.x) > opt.lateral_extent / 2 || std::abs(smp.y) > opt.longitudinal_extent / 2) continue;
      const double frac = s.duration > 0 ? std::clamp(smp.t / s.duration, 0.0, 1.0) : 1.0;
      const int shade = static_cast<int>(std::lround(200.0 * (1.0 - frac)));  // later samples are darker
      o << "<circle cx=\"" << num(px(smp.x)) << "\" cy=\"" << num(py(smp.y)) << "\" r=\"2.2\" fill=\"rgb(" << shade
        << ',' << shade << ',' << 255 << ")\"/>\n";
    }
  const double ex = px(0), ey = py(0), a = 0.9 * scale;
  o << "<polygon points=\"" << num(ex) << ',' << num(ey - 1.5 * a) << ' ' << num(ex - a) << ',' << num(ey + a) << ' '
    << num(ex + a) << ',' << num(ey + a) << "\" fill=\"#d62728\"/>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace scenlat
