#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <initializer_list>
#include <random>

namespace gendie {

// SplitMix64 finalizer; used to fan seeds out deterministically
// (run seed -> iteration -> item -> node -> sample).
inline std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = mix_seed(base);
  for (std::uint64_t p : path) {
    s = mix_seed(s ^ mix_seed(p + 0x632BE59BD9B4E019ULL));
  }
  return s;
}

// Thin wrapper around mt19937_64 with a portable [0,1) draw; the standard
// distributions are implementation-defined, which would break byte-identical
// replays across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) return 0;
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, no caching so the stream position is predictable.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(T& container) {
    for (std::size_t i = container.size(); i > 1; --i) {
      std::swap(container[i - 1], container[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a, used for config and parameter fingerprints in manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace gendie
