#include "svg.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "bowsim/errors.hpp"

namespace bowsim::cli {

namespace {

constexpr double kLeft = 80.0, kRight = 30.0, kTop = 40.0, kBottom = 60.0;

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

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (!(lo <= hi)) lo = 0.0, hi = 1.0;
    if (lo == hi) {
      const double pad = lo == 0.0 ? 1.0 : 0.05 * std::abs(lo);
      lo -= pad;
      hi += pad;
    }
  }
};

// Roughly five round-numbered ticks.
std::vector<double> ticks(double lo, double hi) {
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return out;
}

std::string header(int w, int h, const std::string& title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n"
      "<text x=\"{:.1f}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
      w, h, w, h, w, h, w / 2.0, escape(title));
}

std::string axes(int w, int h, const Range& xr, const Range& yr, bool log_y, const std::string& xlabel,
                 const std::string& ylabel) {
  const double pw = w - kLeft - kRight, ph = h - kTop - kBottom;
  std::string s = fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"black\"/>\n",
                              kLeft, kTop, pw, ph);
  for (double t : ticks(xr.lo, xr.hi)) {
    const double x = kLeft + (t - xr.lo) / (xr.hi - xr.lo) * pw;
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>"
                     "<text x=\"{0:.2f}\" y=\"{3:.2f}\" text-anchor=\"middle\">{4:.4g}</text>\n",
                     x, kTop + ph, kTop + ph + 5, kTop + ph + 18, t);
  }
  for (double t : ticks(yr.lo, yr.hi)) {
    const double y = kTop + ph - (t - yr.lo) / (yr.hi - yr.lo) * ph;
    const std::string label = log_y ? fmt::format("1e{:g}", t) : fmt::format("{:.4g}", t);
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"black\"/>"
                     "<text x=\"{3:.2f}\" y=\"{4:.2f}\" text-anchor=\"end\">{5}</text>\n",
                     kLeft - 5, y, kLeft, kLeft - 8, y + 4, label);
  }
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2, h - 15.0,
                   escape(xlabel));
  s += fmt::format("<text x=\"18\" y=\"{0:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0:.1f})\">{1}</text>\n",
                   kTop + ph / 2, escape(ylabel));
  return s;
}

// Five-stop viridis approximation.
std::string colormap(double u) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                                               {94, 201, 98}, {253, 231, 37}}};
  u = std::clamp(u, 0.0, 1.0) * 4.0;
  const int k = std::min(static_cast<int>(u), 3);
  const double f = u - k;
  std::array<int, 3> c{};
  for (int i = 0; i < 3; ++i) c[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(stops[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] * (1 - f) + stops[static_cast<std::size_t>(k + 1)][static_cast<std::size_t>(i)] * f));
  return fmt::format("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]);
}

}  // namespace

Series thin(Series s, std::size_t max_points) {
  if (s.x.size() <= max_points || max_points < 2) return s;
  const std::size_t stride = (s.x.size() + max_points - 2) / (max_points - 1);
  Series out = s;
  out.x.clear();
  out.y.clear();
  for (std::size_t i = 0; i < s.x.size(); i += stride) {
    out.x.push_back(s.x[i]);
    out.y.push_back(s.y[i]);
  }
  if (out.x.back() != s.x.back()) {
    out.x.push_back(s.x.back());
    out.y.push_back(s.y.back());
  }
  return out;
}

std::string line_plot_svg(const PlotSpec& spec) {
  Range xr, yr;
  auto ty = [&](double v) { return spec.log_y ? (v > 0.0 ? std::log10(v) : std::numeric_limits<double>::quiet_NaN()) : v; };
  for (const Series& s : spec.series) {
    if (s.x.size() != s.y.size()) throw ExportError(fmt::format("series '{}' has mismatched x and y", s.label));
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xr.add(s.x[i]);
      yr.add(ty(s.y[i]));
    }
  }
  for (double h : spec.hlines) yr.add(ty(h));
  xr.settle();
  yr.settle();
  const double pw = spec.width - kLeft - kRight, ph = spec.height - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::string s = header(spec.width, spec.height, spec.title);
  for (const Band& b : spec.bands) {
    const double x0 = px(std::max(b.x0, xr.lo)), x1 = px(std::min(b.x1, xr.hi));
    if (x1 <= x0) continue;
    s += fmt::format("<rect class=\"band\" x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"/>\n",
                     x0, kTop, x1 - x0, ph, b.color);
  }
  for (double h : spec.hlines) {
    const double y = py(ty(h));
    s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n",
                     kLeft, y, kLeft + pw, y);
  }
  s += axes(spec.width, spec.height, xr, yr, spec.log_y, spec.xlabel, spec.ylabel);
  int k = 0;
  for (const Series& raw : spec.series) {
    const Series ser = thin(raw);
    std::string d;
    bool pen = false;
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      const double y = ty(ser.y[i]);
      if (!std::isfinite(y) || !std::isfinite(ser.x[i])) {
        pen = false;
        continue;
      }
      d += fmt::format("{}{:.2f},{:.2f} ", pen ? "L" : "M", px(ser.x[i]), py(y));
      pen = true;
    }
    s += fmt::format("<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{}/>\n", d, ser.color,
                     ser.dashed ? " stroke-dasharray=\"6 4\"" : "");
    const double ly = kTop + 14.0 + 16.0 * k;
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"{}/>"
                     "<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n",
                     kLeft + pw - 150, ly, kLeft + pw - 130, ly, ser.color, ser.dashed ? " stroke-dasharray=\"4 2\"" : "",
                     kLeft + pw - 125, ly + 4, escape(ser.label));
    ++k;
  }
  s += "</svg>\n";
  return s;
}

std::string heatmap_svg(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& z,
                        const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  if (z.rows() != y.size() || z.cols() != x.size() || x.size() < 2 || y.size() < 2) {
    throw ExportError("heatmap: grid and axis sizes disagree");
  }
  const bool log_z = (z.array() > 0.0).all();
  const Eigen::MatrixXd c = log_z ? Eigen::MatrixXd(z.array().log10()) : z;
  const double lo = c.minCoeff(), hi = c.maxCoeff();
  const int w = 640, h = 600;
  Range xr, yr;
  xr.add(x.minCoeff());
  xr.add(x.maxCoeff());
  yr.add(y.minCoeff());
  yr.add(y.maxCoeff());
  xr.settle();
  yr.settle();
  const double pw = w - kLeft - kRight - 60.0, ph = h - kTop - kBottom;
  const double cw = pw / static_cast<double>(x.size()), ch = ph / static_cast<double>(y.size());
  // Cells centered on their grid points: widen the axis range by half a cell.
  const double dx = (xr.hi - xr.lo) / static_cast<double>(x.size() - 1) / 2.0;
  const double dy = (yr.hi - yr.lo) / static_cast<double>(y.size() - 1) / 2.0;
  Range xa{xr.lo - dx, xr.hi + dx}, ya{yr.lo - dy, yr.hi + dy};

  std::string s = header(w, h, title);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double u = hi > lo ? (c(i, j) - lo) / (hi - lo) : 0.5;
      s += fmt::format("<rect class=\"cell\" x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"/>\n",
                       kLeft + j * cw, kTop + ph - (i + 1) * ch, cw + 0.05, ch + 0.05, colormap(u));
    }
  }
  s += axes(w - 60, h, xa, ya, false, xlabel, ylabel);
  const double bx = w - kRight - 40.0;
  for (int k = 0; k < 50; ++k) {
    s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.2f}\" width=\"16\" height=\"{:.2f}\" fill=\"{}\"/>\n", bx,
                     kTop + ph - (k + 1) * ph / 50.0, ph / 50.0 + 0.05, colormap((k + 0.5) / 50.0));
  }
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}{:.3g}</text>\n", bx - 10, kTop - 6, log_z ? "log10 " : "", hi);
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{:.3g}</text>\n", bx - 10, kTop + ph + 16, lo);
  s += "</svg>\n";
  return s;
}

}  // namespace bowsim::cli
