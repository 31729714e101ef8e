#include "wav.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "bowsim/errors.hpp"

namespace bowsim::cli {

std::vector<double> block_average(const Eigen::VectorXd& x, long factor) {
  if (factor < 1) throw ExportError("decimation factor must be >= 1");
  const long blocks = static_cast<long>(x.size()) / factor;
  std::vector<double> out(static_cast<std::size_t>(blocks));
  for (long k = 0; k < blocks; ++k) out[static_cast<std::size_t>(k)] = x.segment(k * factor, factor).mean();
  return out;
}

std::vector<double> render_audio(const Trajectory& traj, double rate, double peak_dbfs) {
  if (!(rate > 0.0)) throw ExportError("audio rate must be positive");
  const double ratio = traj.sample_rate / rate;
  const long factor = std::lround(ratio);
  if (factor < 1 || std::abs(ratio - static_cast<double>(factor)) > 1e-9 * ratio) {
    throw ExportError(fmt::format("trajectory rate {} Hz is not an integer multiple of {} Hz", traj.sample_rate, rate));
  }
  std::vector<double> out = block_average(traj.p, factor);
  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return out;
  const double gain = std::pow(10.0, peak_dbfs / 20.0) / peak;
  for (double& v : out) v *= gain;
  return out;
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

}  // namespace

void write_wav(const std::filesystem::path& path, const std::vector<double>& samples, int rate) {
  if (rate <= 0) throw ExportError("WAV rate must be positive");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ExportError(fmt::format("cannot write '{}'", path.string()));
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(rate));
  put_u32(out, static_cast<std::uint32_t>(rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double v : samples) {
    const double clipped = std::clamp(v, -1.0, 1.0);
    const auto s = static_cast<std::int16_t>(std::lround(clipped * 32767.0));
    put_u16(out, static_cast<std::uint16_t>(s));
  }
  if (!out) throw ExportError(fmt::format("write to '{}' failed", path.string()));
}

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ExportError(fmt::format("cannot read '{}'", path.string()));
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw ExportError(fmt::format("'{}' is not a RIFF/WAVE file", path.string()));
  }
  WavData w;
  std::size_t pos = 12;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = get_u32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + size > bytes.size()) throw ExportError("truncated WAV chunk");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (get_u16(body) != 1) throw ExportError("only PCM WAV is supported");
      w.channels = get_u16(body + 2);
      w.rate = static_cast<int>(get_u32(body + 4));
      w.bits = get_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt || w.bits != 16) throw ExportError("only 16-bit WAV data is supported");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<std::int16_t>(get_u16(body + 2 * i));
      }
      return w;
    }
    pos += 8 + size + (size & 1u);
  }
  throw ExportError("WAV file has no data chunk");
}

}  // namespace bowsim::cli
