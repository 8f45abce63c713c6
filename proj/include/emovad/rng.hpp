#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace emovad {

// Engine seeded from a tuple of keys, e.g. (run seed, utterance index, stream
// tag). Distinct tuples give unrelated streams.
inline std::mt19937_64 keyed_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(keys.size() * 2);
  for (auto k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

// Stream tags.
namespace stream {
inline constexpr std::uint64_t kPrototypes = 0x70726f74;
inline constexpr std::uint64_t kUtterance = 0x75747472;
inline constexpr std::uint64_t kExtend = 0x6578746e;
inline constexpr std::uint64_t kNoise = 0x6e6f6973;
inline constexpr std::uint64_t kShuffle = 0x73687566;
}  // namespace stream

}  // namespace emovad
