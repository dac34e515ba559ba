#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace glff {

/// Independent deterministic generator for (seed, key...), e.g.
/// (global seed, sample id, epoch). Equal keys give equal streams.
inline std::mt19937_64 substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace glff
