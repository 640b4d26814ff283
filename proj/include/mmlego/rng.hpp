#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace mmlego {

// FNV-1a 64-bit; used for named rng streams and for payload checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t seed = 1469598103934665603ull) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

// Deterministic named stream derived from a master seed. Streams with the
// same name and master coincide across processes and platforms.
inline std::mt19937_64 seeded_rng(std::uint64_t master, std::string_view stream) {
  std::uint64_t h = fnv1a64(stream.data(), stream.size());
  h ^= master + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return std::mt19937_64(h);
}

}  // namespace mmlego
