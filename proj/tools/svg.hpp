#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace bowsim::cli {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::string color = "#1f77b4";
  bool dashed = false;
};

/// Shaded x-interval, drawn behind the series.
struct Band {
  double x0 = 0.0, x1 = 0.0;
  std::string color = "#dddddd";
};

struct PlotSpec {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  std::vector<Band> bands;
  std::vector<double> hlines;
  bool log_y = false;
  int width = 800;
  int height = 480;
};

/// Line plot with axes, ticks and legend. Output depends only on the inputs.
std::string line_plot_svg(const PlotSpec& spec);

/// One rect per cell; z(i, j) sits at (x[j], y[i]). Colors follow log10 z when z > 0 everywhere.
std::string heatmap_svg(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& z,
                        const std::string& title, const std::string& xlabel, const std::string& ylabel);

/// Keeps at most `max_points` evenly strided samples, always including the last.
Series thin(Series s, std::size_t max_points = 4000);

}  // namespace bowsim::cli
