#include "manifest.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <memory>

#include "bowsim/errors.hpp"
#include "json.hpp"

namespace bowsim::cli {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw ExportError("SHA-256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw ExportError("SHA-256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw ExportError("SHA-256 final failed");
    std::string out;
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ExportError(fmt::format("cannot read '{}' for hashing", path.string()));
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in.read(buf.data(), buf.size()) || in.gcount() > 0) h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  return h.hex();
}

std::string sha256_text(const std::string& text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return h.hex();
}

void Manifest::add(const std::string& name) {
  const auto p = path(name);
  if (!std::filesystem::exists(p)) throw ExportError(fmt::format("artifact '{}' was not written", p.string()));
  entries_.push_back({name, std::filesystem::file_size(p), sha256_file(p)});
}

void Manifest::write(const std::string& command, std::uint64_t seed, const std::string& resolved_config) const {
  std::vector<ManifestEntry> sorted = entries_;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  nlohmann::ordered_json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config_sha256"] = sha256_text(resolved_config);
  nlohmann::ordered_json files = nlohmann::ordered_json::array();
  for (const auto& e : sorted) files.push_back({{"path", e.path}, {"bytes", e.bytes}, {"sha256", e.sha256}});
  j["files"] = std::move(files);
  std::ofstream out(path("manifest.json"), std::ios::binary);
  if (!out) throw ExportError(fmt::format("cannot write manifest in '{}'", dir_.string()));
  out << j.dump(2) << '\n';
}

}  // namespace bowsim::cli
