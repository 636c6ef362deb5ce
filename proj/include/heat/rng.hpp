#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace heat {

// Deterministic, platform-independent RNG. std distributions are
// implementation-defined, so the generator and the variate transforms are
// hand-rolled to keep dataset/checkpoint bytes identical everywhere.
//
// All randomness in the pipeline flows from one root seed through named
// substreams: Rng(root, "data", episode_id), Rng(root, "init", 0), ...

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  Rng(std::uint64_t root_seed, std::string_view stream, std::uint64_t index = 0) {
    std::uint64_t s = root_seed;
    s ^= fnv1a(stream);
    s = splitmix64(s);
    s ^= index * 0x9e3779b97f4a7c15ULL;
    state_ = splitmix64(s);
    if (state_ == 0) state_ = 0x1234567898765431ULL;
  }

  std::uint64_t next_u64() {
    // xorshift128+ style step on top of splitmix-derived state
    return splitmix64(state_);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (one value per call, deterministic).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <class It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = uniform_int(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace heat
