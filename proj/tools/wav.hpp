#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bowsim/fdm.hpp"

namespace bowsim::cli {

/// Averages blocks of `factor` samples; trailing samples that do not fill a block are dropped.
std::vector<double> block_average(const Eigen::VectorXd& x, long factor);

/// p series at `rate`, peak-normalized to `peak_dbfs`. A silent input stays silent.
std::vector<double> render_audio(const Trajectory& traj, double rate, double peak_dbfs);

/// Mono 16-bit PCM. Samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const std::vector<double>& samples, int rate);

struct WavData {
  int rate = 0;
  int channels = 0;
  int bits = 0;
  std::vector<std::int16_t> samples;
};
WavData read_wav(const std::filesystem::path& path);

}  // namespace bowsim::cli
