#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace qg {

/// 64-bit FNV-1a. Used for vocabulary fingerprints and run manifests, not security.
class Fnv1a {
 public:
  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_file(const std::string& path);

}  // namespace qg
