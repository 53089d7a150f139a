#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace divtol {

using Engine = std::mt19937_64;

/// Independent engine for the stream identified by (seed, keys...).
/// Replicate r of a study uses substream(seed, {r}); the mapping never
/// depends on execution order, so replicates can run in any order.
inline Engine substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * keys.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return Engine(seq);
}

}  // namespace divtol
