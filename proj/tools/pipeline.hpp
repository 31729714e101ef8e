#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bowsim/errors.hpp"
#include "config.hpp"
#include "manifest.hpp"

namespace bowsim::cli {

struct CommandOptions {
  std::string command;
  int threads = 1;
  std::filesystem::path checkpoint;  ///< eval, hessian, landscape, synth
  std::filesystem::path input;       ///< trajectory CSV for synth
  std::string plot_kind;             ///< friction, trajectory, residuals, density, landscape, stick-slip, loss
  std::vector<std::filesystem::path> plot_inputs;
};

/// Training diverged; the last finite parameters were saved to `checkpoint`.
class TrainingFailure : public Error {
 public:
  TrainingFailure(const std::string& what, std::filesystem::path checkpoint)
      : Error(what), checkpoint_(std::move(checkpoint)) {}
  const std::filesystem::path& checkpoint() const { return checkpoint_; }

 private:
  std::filesystem::path checkpoint_;
};

struct CommandInfo {
  std::string name;
  std::string help;
};

inline const std::vector<CommandInfo> kCommands{
    {"fdm", "Reference trajectory and stick-slip segments"},
    {"train-pinn", "Train time-marching PINN windows from the configured IC"},
    {"train-deeponet", "Train a physics-informed DeepONet"},
    {"train-hybrid", "Train a DeepONet with FDM observations added"},
    {"eval", "Metrics of a checkpoint against the FDM reference"},
    {"hessian", "Top eigenpairs and spectral density of a checkpoint's loss"},
    {"landscape", "Loss on a 2-D grid around a checkpoint"},
    {"synth", "Render a trajectory, checkpoint or FDM run to WAV"},
    {"plot", "SVG figures from CSV outputs"},
};

/// Runs one command into config.output.dir. Every produced file, including
/// resolved_config.toml, is listed in manifest.json.
Manifest run_command(const RunConfig& config, const CommandOptions& options);

}  // namespace bowsim::cli
