#include "qg/hash.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "qg/error.hpp"

namespace qg {

std::string Fnv1a::hex() const {
  std::array<char, 17> buf{};
  std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(state_));
  return std::string(buf.data(), 16);
}

std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for hashing: " + path);
  Fnv1a h;
  std::array<char, 1 << 16> chunk{};
  while (in.read(chunk.data(), chunk.size()) || in.gcount() > 0) {
    h.update(std::string_view(chunk.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.hex();
}

}  // namespace qg
