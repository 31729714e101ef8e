#include "plots.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bowsim/errors.hpp"

namespace bowsim::cli {

namespace {

const std::vector<std::string> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

const std::string& color(std::size_t i) { return kPalette[i % kPalette.size()]; }

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream row(line);
  std::string cell;
  while (std::getline(row, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& cell, const std::filesystem::path& path, std::size_t line) {
  // strtod keeps subnormal values that std::stod rejects.
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (!cell.empty() && end == cell.c_str() + cell.size()) return v;
  throw ConfigError(fmt::format("{}:{}: '{}' is not a number", path.string(), line, cell));
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  return in;
}

}  // namespace

PlotSpec friction_plot(const FrictionParams& params, int points) {
  Series phi_s{"phi", {}, {}, color(0)};
  Series d_s{"dphi/deta", {}, {}, color(1), true};
  for (int i = 0; i < points; ++i) {
    const double eta = -0.5 + static_cast<double>(i) / (points - 1);
    phi_s.x.push_back(eta);
    phi_s.y.push_back(phi(eta, params));
    d_s.x.push_back(eta);
    d_s.y.push_back(dphi_deta(eta, params));
  }
  PlotSpec spec;
  spec.title = fmt::format("Friction characteristic, a = {}", params.a);
  spec.xlabel = "eta [m/s]";
  spec.ylabel = "phi";
  spec.series = {phi_s, d_s};
  const double b = nonlinear_boundary(params);
  spec.bands = {{-b, b, "#eeeeee"}};
  spec.hlines = {0.0};
  return spec;
}

PlotSpec trajectory_plot(const std::vector<NamedTrajectory>& entries) {
  if (entries.empty()) throw ConfigError("trajectory plot needs at least one trajectory");
  PlotSpec spec;
  spec.title = "Momentum p";
  spec.xlabel = "t [s]";
  spec.ylabel = "p [m/s]";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Trajectory& t = entries[i].traj;
    spec.series.push_back({entries[i].name, to_std(t.times()), to_std(t.p), color(i), i > 0});
  }
  return spec;
}

PlotSpec residual_plot(const std::vector<ResidualEntry>& entries, int bins) {
  if (entries.empty()) throw ConfigError("residual plot needs at least one entry");
  auto logs = [](const Eigen::VectorXd& r) {
    std::vector<double> out;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      if (r[i] != 0.0 && std::isfinite(r[i])) out.push_back(std::log10(std::abs(r[i])));
    }
    return out;
  };
  double lo = 1e300, hi = -1e300;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> data;
  for (const ResidualEntry& e : entries) {
    data.emplace_back(logs(e.r1), logs(e.r2));
    for (const auto* v : {&data.back().first, &data.back().second}) {
      for (double x : *v) lo = std::min(lo, x), hi = std::max(hi, x);
    }
  }
  if (!(lo < hi)) lo = -1.0, hi = 1.0;
  const double width = (hi - lo) / bins;
  auto histogram = [&](const std::vector<double>& v, const std::string& label, const std::string& c, bool dashed) {
    std::vector<double> count(static_cast<std::size_t>(bins), 0.0);
    for (double x : v) count[static_cast<std::size_t>(std::clamp(static_cast<int>((x - lo) / width), 0, bins - 1))] += 1.0;
    Series s{label, {}, {}, c, dashed};
    const double norm = v.empty() ? 1.0 : static_cast<double>(v.size()) * width;
    for (int b = 0; b < bins; ++b) {
      s.x.push_back(lo + (b + 0.5) * width);
      s.y.push_back(count[static_cast<std::size_t>(b)] / norm);
    }
    return s;
  };
  PlotSpec spec;
  spec.title = "ODE residual distributions";
  spec.xlabel = "log10 |r|";
  spec.ylabel = "density";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    spec.series.push_back(histogram(data[i].first, entries[i].name + " r1", color(i), true));
    spec.series.push_back(histogram(data[i].second, entries[i].name + " r2", color(i), false));
  }
  return spec;
}

PlotSpec density_plot(const Eigen::VectorXd& eigenvalue, const Eigen::VectorXd& density) {
  PlotSpec spec;
  spec.title = "Hessian eigenvalue density";
  spec.xlabel = "eigenvalue";
  spec.ylabel = "density";
  spec.series.push_back({"SLQ", to_std(eigenvalue), to_std(density), color(0)});
  return spec;
}

PlotSpec stick_slip_plot(const Trajectory& traj, const OscillatorConfig& config) {
  PlotSpec spec;
  spec.title = "Stick (shaded) and slip phases";
  spec.xlabel = "t [s]";
  spec.ylabel = "p [m/s]";
  for (const PhaseSegment& s : stick_slip_segments(traj, config)) {
    if (s.label == PhaseLabel::Stick) spec.bands.push_back({s.t_start, s.t_end, "#f4d7a1"});
  }
  spec.series.push_back({"p", to_std(traj.times()), to_std(traj.p), color(0)});
  spec.hlines = {config.v_bow};
  return spec;
}

PlotSpec loss_history_plot(const std::filesystem::path& csv) {
  std::ifstream in = open(csv);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(fmt::format("{}: empty file", csv.string()));
  const std::vector<std::string> header = split(line);
  std::vector<std::size_t> loss_cols;
  std::size_t step_col = header.size(), window_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].rfind("L_", 0) == 0) loss_cols.push_back(i);
    if (header[i] == "step") step_col = i;
    if (header[i] == "window") window_col = i;
  }
  if (step_col == header.size() || loss_cols.empty()) {
    throw ConfigError(fmt::format("{}: not a loss history", csv.string()));
  }
  std::vector<Series> series;
  for (std::size_t k = 0; k < loss_cols.size(); ++k) series.push_back({header[loss_cols[k]], {}, {}, color(k)});
  // Windows restart their step counter; place them back to back.
  double offset = 0.0, last_x = 0.0, gap = 1.0;
  std::string window = "0";
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line);
    if (cells.size() != header.size()) throw ConfigError(fmt::format("{}:{}: wrong column count", csv.string(), line_no));
    if (window_col < cells.size() && cells[window_col] != window) {
      window = cells[window_col];
      offset = last_x + gap;
    }
    const double x = offset + parse_number(cells[step_col], csv, line_no);
    if (x > last_x) gap = x - last_x;
    last_x = x;
    for (std::size_t k = 0; k < loss_cols.size(); ++k) {
      const std::string& c = cells[loss_cols[k]];
      if (c.empty()) continue;
      series[k].x.push_back(x);
      series[k].y.push_back(parse_number(c, csv, line_no));
    }
  }
  PlotSpec spec;
  spec.title = "Loss history";
  spec.xlabel = "step";
  spec.ylabel = "loss";
  spec.log_y = true;
  for (Series& s : series) {
    if (!s.x.empty()) spec.series.push_back(std::move(s));
  }
  return spec;
}

DensityTable read_density_csv(const std::filesystem::path& path) {
  std::ifstream in = open(path);
  std::string line;
  if (!std::getline(in, line) || line != "eigenvalue,density") {
    throw ConfigError(fmt::format("{}:1: expected header eigenvalue,density", path.string()));
  }
  std::vector<double> x, y;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 2) throw ConfigError(fmt::format("{}:{}: expected two columns", path.string(), line_no));
    x.push_back(parse_number(cells[0], path, line_no));
    y.push_back(parse_number(cells[1], path, line_no));
  }
  DensityTable t;
  t.eigenvalue = Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  t.density = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  return t;
}

LandscapeTable read_landscape_csv(const std::filesystem::path& path) {
  std::ifstream in = open(path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("alpha\\beta,", 0) != 0) {
    throw ConfigError(fmt::format("{}:1: expected header alpha\\beta,...", path.string()));
  }
  const auto header = split(line);
  LandscapeTable t;
  t.beta.resize(static_cast<Eigen::Index>(header.size() - 1));
  for (std::size_t j = 1; j < header.size(); ++j) t.beta[static_cast<Eigen::Index>(j - 1)] = parse_number(header[j], path, 1);
  std::vector<double> alpha;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw ConfigError(fmt::format("{}:{}: wrong column count", path.string(), line_no));
    alpha.push_back(parse_number(cells[0], path, line_no));
    rows.emplace_back();
    for (std::size_t j = 1; j < cells.size(); ++j) rows.back().push_back(parse_number(cells[j], path, line_no));
  }
  t.alpha = Eigen::Map<Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  t.loss.resize(t.alpha.size(), t.beta.size());
  for (Eigen::Index i = 0; i < t.alpha.size(); ++i) {
    for (Eigen::Index j = 0; j < t.beta.size(); ++j) t.loss(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return t;
}

Trajectory read_trajectory_file(const std::filesystem::path& path) {
  std::ifstream in = open(path);
  try {
    return read_trajectory_csv(in);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ExportError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw ExportError(fmt::format("write to '{}' failed", path.string()));
}

}  // namespace bowsim::cli
