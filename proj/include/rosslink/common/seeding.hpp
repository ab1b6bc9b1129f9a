#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace rosslink {

/// SplitMix64 finalizer; the mixing step behind every derived seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Counter scheme: seed_k = splitmix64(seed_{k-1} ^ splitmix64(tag_k)), starting from the base seed.
/// Every stream in the project (corpus, channel blocks, batches, init) comes from this.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(base);
  for (auto t : tags) s = splitmix64(s ^ splitmix64(t));
  return s;
}

}  // namespace rosslink
