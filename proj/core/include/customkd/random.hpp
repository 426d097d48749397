#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace customkd {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Child seed for a named purpose ("teacher.init", "kd.shuffle", ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  return mix_seed(seed ^ fnv1a(purpose));
}

}  // namespace customkd
