#pragma once

#include <cstdint>

namespace kerntune {

// splitmix64 finalizer. Used both as a stream generator and as the seed
// derivation primitive, so every random decision in the framework can be
// pinned to an explicit (seed, tag...) tuple instead of call order.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  return splitmix64(seed ^ (tag + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

template <typename... Tags>
inline uint64_t derive_seed(uint64_t seed, Tags... tags) {
  ((seed = mix_seed(seed, static_cast<uint64_t>(tags))), ...);
  return seed;
}

// Small deterministic generator. Not stdlib <random> because distribution
// output there is implementation-defined; reports must reproduce bit-exactly
// on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  // Uniform in [0, n) via 128-bit multiply-shift.
  uint64_t next_index(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  bool next_bool(double p) { return next_double() < p; }

  template <typename T>
  void shuffle(T* data, size_t n) {
    for (size_t i = n; i > 1; --i) {
      size_t j = next_index(i);
      T tmp = data[i - 1];
      data[i - 1] = data[j];
      data[j] = tmp;
    }
  }

 private:
  uint64_t state_;
};

// Stateless direction/choice hash for per-(slot, iteration) decisions that
// must not depend on how far a trace cursor has advanced.
inline uint64_t event_hash(uint64_t seed, uint64_t a, uint64_t b) {
  return splitmix64(splitmix64(seed ^ 0xa5a5a5a5a5a5a5a5ULL) + a * 0x9e3779b97f4a7c15ULL + b);
}

}  // namespace kerntune
