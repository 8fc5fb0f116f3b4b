#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace fedlight {

// Deterministic, platform-stable random streams. Streams are keyed by
// (seed, purpose, subkeys...): distinct purposes never collide, and any
// principal can reconstruct any stream from the key alone. That property is
// what makes replica state (e.g. item embeddings initialised on several
// clients) bit-identical without coordination.
//
// Generator: xoshiro256++ seeded through splitmix64 over an absorbed key.
// std::mt19937 + std::normal_distribution are avoided on purpose: the
// distributions are not bit-stable across standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view purpose,
            std::initializer_list<std::uint64_t> subkeys = {})
      : RngStream(seed, purpose, std::vector<std::uint64_t>(subkeys)) {}

  RngStream(std::uint64_t seed, std::string_view purpose,
            const std::vector<std::uint64_t>& subkeys) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    for (unsigned char c : purpose) h = splitmix(h ^ c);
    for (std::uint64_t k : subkeys) h = splitmix(h ^ k);
    for (auto& s : state_) {
      h = splitmix(h);
      s = h;
    }
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0,1) with 53 random bits; exact halving chain, bit-stable.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Unbiased index in [0,n) by rejection.
  std::uint32_t uniform_index(std::uint32_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::uint32_t>(x % n);
  }

  // Box-Muller; second deviate cached. log/sqrt/cos/sin on doubles are
  // correctly-rounded-enough in practice to be reproducible on one platform,
  // and reproducibility across principals only needs identical call sequences.
  double normal(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  void fill_bytes(std::uint8_t* out, std::size_t n) {
    std::size_t i = 0;
    while (i < n) {
      std::uint64_t w = next_u64();
      for (int b = 0; b < 8 && i < n; ++b, ++i) {
        out[i] = static_cast<std::uint8_t>(w & 0xff);
        w >>= 8;
      }
    }
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedlight
