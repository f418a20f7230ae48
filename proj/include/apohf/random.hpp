#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace apohf {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent stream seed for (base, tag0, tag1, ...). Every random decision
// in a run draws from a stream keyed by its purpose and iteration, so any
// prefix of a run can be replayed without replaying the streams before it.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = mix64(base);
  for (std::uint64_t t : tags) s = mix64(s ^ mix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  return Rng(derive_seed(base, tags));
}

// Stream tags.
enum class Stream : std::uint64_t {
  kInit = 1,
  kSelect = 2,
  kReport = 3,
  kOracle = 4,
  kEnvironment = 5,
  kTrial = 6,
  kBootstrap = 7,
};

constexpr std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace apohf
