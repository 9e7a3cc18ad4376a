#pragma once

// Deterministic random numbers with named sub-streams.
//
// Every stochastic component draws from a stream derived from one root seed
// plus a tag (and optional indices), so any stage of a pipeline can be
// reproduced in isolation and results are identical across platforms.
// Distribution sampling is implemented here rather than with <random>
// distributions, whose output is implementation-defined.

#include <cmath>
#include <cstdint>
#include <string_view>

#include "outan/common.hpp"

namespace outan {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// FNV-1a over the tag bytes, then mixed; used to derive sub-stream seeds.
inline uint64_t hash_tag(uint64_t h, std::string_view tag) {
  for (char c : tag) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  static Rng substream(uint64_t root, std::string_view tag, uint64_t i0 = 0, uint64_t i1 = 0) {
    uint64_t h = 0xCBF29CE484222325ULL ^ root;
    h = hash_tag(h, tag);
    uint64_t mix = h ^ (i0 * 0x9E3779B97F4A7C15ULL) ^ (i1 * 0xC2B2AE3D27D4EB4FULL);
    return Rng(mix);
  }

  // xoshiro256++
  uint64_t next_u64() {
    auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 bits.
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [lo, hi] inclusive.
  uint64_t uniform_int(uint64_t lo, uint64_t hi) {
    uint64_t span = hi - lo + 1;
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * span;
    return lo + static_cast<uint64_t>(m >> 64);
  }

  // Box-Muller; one draw consumed per pair of uniforms, no caching.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential(double rate) {
    if (rate <= 0.0) throw ValidationError("exponential rate must be positive");
    double u = uniform01();
    while (u <= 0.0) u = uniform01();
    return -std::log(u) / rate;
  }

 private:
  uint64_t s_[4];
};

}  // namespace outan
