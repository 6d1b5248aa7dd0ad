#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace alliance {

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a. Used where a short, platform-stable hash is enough.
constexpr std::uint64_t fnv1a64(std::string_view data,
                                std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace alliance
