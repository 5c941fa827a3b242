#pragma once

#include <cstdint>
#include <random>

namespace emvamp {

using Rng = std::mt19937_64;

// splitmix64 finalizer. Seed derivation goes through this so that the
// trial/stream seed policy is a documented, platform-independent contract
// (tests pin golden values for it).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for (base, stream). derive_seed(b, s1) != derive_seed(b, s2)
// for s1 != s2 with overwhelming probability.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ splitmix64(stream ^ 0xd1b54a32d192ed03ULL));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(base, a), b);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace emvamp
