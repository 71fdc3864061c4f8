#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cvpm {

// splitmix64 step; chosen over std engines because its output is identical
// across platforms and standard libraries.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over the tag string; lets seed streams be named instead of numbered.
inline uint64_t seed_tag(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t derive_seed(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

template <typename... Rest>
uint64_t derive_seed(uint64_t a, uint64_t b, Rest... rest) {
  return derive_seed(derive_seed(a, b), rest...);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() { return splitmix64(state_); }

  // [0, 1)
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased draw from [0, n); n > 0.
  uint64_t below(uint64_t n) {
    uint64_t lim = ~0ULL - ~0ULL % n;
    uint64_t v;
    do {
      v = next();
    } while (v >= lim);
    return v % n;
  }

  // Box-Muller; two fresh draws per sample keeps replay order simple.
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  uint64_t state_;
};

// Shared by every trainer so batch orders line up across model variants.
template <typename T>
std::vector<T> epoch_shuffle(std::vector<T> items, uint64_t seed, int epoch) {
  Rng rng(derive_seed(seed, seed_tag("epoch_shuffle"), uint64_t(epoch)));
  rng.shuffle(items);
  return items;
}

}  // namespace cvpm
