#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rgpb {

/// Derives an independent seed for a named consumer ("data", "init",
/// "shuffle", ...) from a single run seed.
inline std::uint64_t sub_seed(std::uint64_t seed, std::string_view name) {
  // FNV-1a over the name, mixed with the seed through seed_seq.
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

using Rng = std::mt19937_64;

}  // namespace rgpb
