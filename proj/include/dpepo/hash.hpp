#pragma once

#include <cstdint>
#include <string_view>

namespace dpepo {

// 64-bit FNV-1a. Stable across platforms and runs; used for observation digests.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent child seed; used to give every group member,
/// step and iteration its own reproducible random stream.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t salt) noexcept {
  return splitmix64(parent ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

}  // namespace dpepo
