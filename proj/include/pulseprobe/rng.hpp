#pragma once

#include <cstdint>
#include <random>

namespace pulseprobe {

/// Purpose tags keep the per-frame streams of different draws independent.
enum class Stream : std::uint64_t {
  Pulse = 1,
  Jitter = 2,
  Photons = 3,
  OutOfField = 4,
  Seeding = 5,
  Test = 99,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based stream: the engine for (seed, index, stream) is derived by hashing,
/// so draws do not depend on evaluation order or thread count.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index, Stream stream) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (index + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(seed)};
  return std::mt19937_64(seq);
}

}  // namespace pulseprobe
