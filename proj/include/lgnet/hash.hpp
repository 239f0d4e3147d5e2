#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace lgnet {

/// 64-bit FNV-1a, chainable through `h`.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

std::string to_hex(std::uint64_t h);

}  // namespace lgnet
