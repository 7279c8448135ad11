#include "qg/numeric/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "qg/error.hpp"

namespace qg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[6] = {'Q', 'G', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw FormatError(path + ": truncated checkpoint");
  }
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n, const std::string& path) {
  if (n > (1ULL << 32)) throw FormatError(path + ": implausible field length");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError(path + ": truncated checkpoint");
  }
  return s;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint16_t>(out, kVersion);
    const auto text = header.dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, m] : tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
      }
    }
    if (!out) throw FormatError("failed writing checkpoint: " + path);
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path + ": not a checkpoint file");
  }
  if (const auto v = get<std::uint16_t>(in, path); v != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  const auto header_len = get<std::uint64_t>(in, path);
  try {
    ck.header = nlohmann::json::parse(get_bytes(in, header_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint header: " + e.what());
  }
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name = get_bytes(in, get<std::uint32_t>(in, path), path);
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    if (rows * cols > (1ULL << 32)) throw FormatError(path + ": implausible tensor size");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, path);
    }
    ck.tensors.emplace(name, std::move(m));
  }
  return ck;
}

}  // namespace qg
