#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mcl {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Folds a base seed and a list of stream tags into one well-mixed seed, so that
/// independent consumers (shuffling, replay, Fisher sampling) never share a stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = detail::splitmix64(seed);
  for (auto t : tags) h = detail::splitmix64(h ^ detail::splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  return Rng(derive_seed(seed, tags));
}

// Stream tags used across the library.
namespace stream_tag {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t method = 3;
inline constexpr std::uint64_t split = 4;
inline constexpr std::uint64_t data = 5;
inline constexpr std::uint64_t pretrain = 6;
inline constexpr std::uint64_t joint = 7;
}  // namespace stream_tag

}  // namespace mcl
