#pragma once

// Named, counter-addressed random sub-streams derived from one root seed.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace adloop {

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                          std::initializer_list<std::uint64_t> parts = {});

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view stream,
                                std::initializer_list<std::uint64_t> parts = {}) {
  return std::mt19937_64(derive_seed(root, stream, parts));
}

}  // namespace adloop
