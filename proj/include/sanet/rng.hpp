#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace sanet {

// Counter-style splitmix64 stream. Every consumer derives its own stream from
// (root seed, tag, indices), so draw order in one consumer can never shift the
// values another consumer sees. That property carries the determinism
// guarantees: per-parameter init, per-image rendering and per-slot
// augmentation are all independent streams.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : state_(seed) {}

  static RngStream derive(uint64_t seed, std::string_view tag, uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = 1469598103934665603ull ^ seed;
    for (char c : tag) {
      h ^= (unsigned char)c;
      h *= 1099511628211ull;
    }
    h ^= 0x9e3779b97f4a7c15ull + a;
    h *= 1099511628211ull;
    h ^= 0xc2b2ae3d27d4eb4full + b;
    h *= 1099511628211ull;
    RngStream s(h);
    s.next_u64();  // burn one step so nearby tags decorrelate
    return s;
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }  // [0,1)
  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }
  int uniform_int(int n) { return (int)(next_u64() % (uint64_t)n); }  // [0,n)

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sanet
