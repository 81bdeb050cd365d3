#pragma once

#include <cstdint>
#include <random>

namespace mixl {

/// splitmix64 finalizer. Bijective on 64-bit words; used to derive
/// well-separated seed streams from (base seed, stream tags).
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive a child seed by folding a tag into a parent seed.
/// Chaining derive_seed calls encodes a tag path, so independent
/// components (cells, chains, individuals) get independent streams
/// regardless of execution order.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
  return mix64(parent ^ mix64(tag));
}

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag, Tags... rest) {
  return derive_seed(derive_seed(parent, tag), rest...);
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

}  // namespace mixl
