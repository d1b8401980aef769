#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dbl {

// Counter-based generator: output i of a stream is a pure function of
// (seed, stream label, i), so independent streams can be drawn in any
// order or in parallel and still reproduce bit-identically.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed, std::string_view label = {})
      : key_(mix(seed ^ fnv1a(label))), counter_(0) {}

  // Derive an independent stream. Labels form a path ("zoo/clean/3/init").
  RandomSource stream(std::string_view label) const {
    RandomSource r(0);
    r.key_ = mix(key_ ^ fnv1a(label));
    r.counter_ = 0;
    return r;
  }
  RandomSource stream(std::string_view label, std::uint64_t index) const {
    RandomSource r = stream(label);
    r.key_ = mix(r.key_ ^ (0x9e3779b97f4a7c15ull * (index + 1)));
    return r;
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  // Uniform in [0, 1), 53-bit mantissa, then rounded to float32.
  float uniform() { return static_cast<float>((next_u64() >> 11) * 0x1.0p-53); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller on the uniform stream.
  float normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = ((next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = (next_u64() >> 11) * 0x1.0p-53;
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = static_cast<float>(mag * std::sin(6.283185307179586477 * u2));
    have_spare_ = true;
    return static_cast<float>(mag * std::cos(6.283185307179586477 * u2));
  }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  void fill_uniform(std::vector<float>& v) {
    for (auto& x : v) x = uniform();
  }
  void fill_normal(std::vector<float>& v) {
    for (auto& x : v) x = normal();
  }

  std::uint64_t key() const { return key_; }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_;
  bool have_spare_ = false;
  float spare_ = 0.f;
};

}  // namespace dbl
