#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace protofed {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream keyed by a tuple, e.g. (seed, purpose, round, client).
/// Changing one key never perturbs streams with other keys.
inline Rng stream(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k));
  return Rng(h);
}

// Stream purposes.
enum class Purpose : std::uint64_t {
  Synthesis = 1,
  Split,
  Partition,
  Missingness,
  ZeroFill,
  Init,
  Sampling,
  LocalTrain,
  Dropout,
};

inline Rng stream(std::uint64_t seed, Purpose p, std::uint64_t a = 0, std::uint64_t b = 0) {
  return stream({seed, static_cast<std::uint64_t>(p), a, b});
}

}  // namespace protofed
