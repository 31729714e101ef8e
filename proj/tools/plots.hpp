#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bowsim/eval.hpp"
#include "bowsim/fdm.hpp"
#include "bowsim/spectra.hpp"
#include "svg.hpp"

namespace bowsim::cli {

/// phi and d phi / d eta over eta in [-0.5, 0.5].
PlotSpec friction_plot(const FrictionParams& params, int points = 2001);

struct NamedTrajectory {
  std::string name;
  Trajectory traj;
};

/// p of the first entry (the reference) overlaid with the others.
PlotSpec trajectory_plot(const std::vector<NamedTrajectory>& entries);

/// Histograms of log10 |r1| (dashed) and log10 |r2| per entry.
PlotSpec residual_plot(const std::vector<ResidualEntry>& entries, int bins = 60);

PlotSpec density_plot(const Eigen::VectorXd& eigenvalue, const Eigen::VectorXd& density);

/// p over time with the nonlinear-region segments shaded.
PlotSpec stick_slip_plot(const Trajectory& traj, const OscillatorConfig& config);

/// Loss history columns L_* against step, log scale.
PlotSpec loss_history_plot(const std::filesystem::path& csv);

struct DensityTable {
  Eigen::VectorXd eigenvalue, density;
};
DensityTable read_density_csv(const std::filesystem::path& path);

struct LandscapeTable {
  Eigen::VectorXd alpha, beta;
  Eigen::MatrixXd loss;
};
LandscapeTable read_landscape_csv(const std::filesystem::path& path);

Trajectory read_trajectory_file(const std::filesystem::path& path);

/// Writes `text` to `path`, throwing ExportError on failure.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace bowsim::cli
