#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "bowsim/eval.hpp"
#include "bowsim/fdm.hpp"
#include "bowsim/nets.hpp"
#include "bowsim/spectra.hpp"
#include "bowsim/train.hpp"

namespace bowsim::cli {

struct FdmSettings {
  double sample_rate = kReferenceRate;
  double duration = 0.1;
};

struct ModelSettings {
  NetArch arch;
  double scale_t = 0.1;
  double scale_pq = 0.2;
};

struct HybridSettings {
  double observation_rate = 44100.0;  ///< FDM rate of the zero-IC observation run
  double duration = 0.0;              ///< 0 means one window, s^t
};

struct EvalSettings {
  int cases = 20;
  double t_max = 0.05;
  double reference_rate = kReferenceRate;
  double output_rate = 44100.0;
  MetricConvention convention;
  std::uint64_t seed = 1;
};

struct SpectraSettings {
  int top_k = 2;
  LanczosOptions lanczos;
  SlqOptions slq;
  int landscape_grid = 21;
  bool random_directions = false;  ///< landscape along Gaussian directions instead of the top-2 eigenvectors
  int loss_rows = 4000;  ///< DeepONet rows used for the Hessian/landscape loss
};

struct SynthSettings {
  double rate = 44100.0;
  double peak_dbfs = -1.0;
};

struct OutputSettings {
  std::string dir = "out";
};

/// Parsed run configuration. Every key is optional; unknown keys are errors.
struct RunConfig {
  std::string source;
  OscillatorConfig scenario;
  InitialCondition ic;
  FdmSettings fdm;
  ModelSettings model;
  TrainPlan plan;
  HybridSettings hybrid;
  EvalSettings eval;
  SpectraSettings spectra;
  SynthSettings synth;
  OutputSettings output;
  std::uint64_t seed = 0;
};

/// Parses TOML text. Errors are ConfigError with "<source>:<line>: <message>".
RunConfig parse_config(std::string_view text, const std::string& source_name);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical TOML rendering of a configuration; parsing it gives the same configuration.
/// Without `with_output` the [output] section is left out, so runs into different
/// directories render identically.
std::string render_config(const RunConfig& config, bool with_output = true);

}  // namespace bowsim::cli
