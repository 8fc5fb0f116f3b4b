#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace fedlight {

// sum + err == a + b exactly (Knuth two-sum, no branch on magnitudes).
// Requires strict IEEE double arithmetic (the build disables fast-math).
struct TwoSumResult {
  double sum;
  double err;
};

inline TwoSumResult two_sum(double a, double b) {
  const double s = a + b;
  const double bv = s - a;
  const double av = s - bv;
  const double br = b - bv;
  const double ar = a - av;
  return {s, ar + br};
}

// Exact accumulator for finite doubles: a 2176-bit two's-complement
// fixed-point register spanning weights 2^-1074 .. 2^1101. Adding is exact and
// therefore order-invariant; round() performs the single round-to-nearest-even
// of the true total. Used wherever a sum must not depend on operand order or
// bracketing (share reconstruction, gradient aggregation).
class ExactAccumulator {
 public:
  static constexpr int kLimbs = 34;

  void add(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("ExactAccumulator: non-finite addend");
    if (x == 0.0) return;
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    const bool neg = bits >> 63;
    const std::uint64_t raw_exp = (bits >> 52) & 0x7ff;
    const std::uint64_t frac = bits & ((1ULL << 52) - 1);
    const std::uint64_t mant = raw_exp == 0 ? frac : (frac | (1ULL << 52));
    // weight of mantissa bit 0 is 2^(offset - 1074), offset in [0, 2045]
    const int offset = raw_exp == 0 ? 0 : static_cast<int>(raw_exp) - 1;
    const int limb = offset >> 6;
    const int shift = offset & 63;
    const unsigned __int128 wide = static_cast<unsigned __int128>(mant) << shift;
    const std::uint64_t lo = static_cast<std::uint64_t>(wide);
    const std::uint64_t hi = static_cast<std::uint64_t>(wide >> 64);
    if (!neg) {
      add_at(limb, lo, hi);
    } else {
      sub_at(limb, lo, hi);
    }
  }

  // Correctly rounded value of the exact total. +0.0 for an exact zero sum.
  double round() const {
    std::array<std::uint64_t, kLimbs> m = limbs_;
    double sign = 1.0;
    if (m[kLimbs - 1] >> 63) {  // negative: take magnitude
      sign = -1.0;
      std::uint64_t carry = 1;
      for (int i = 0; i < kLimbs; ++i) {
        const std::uint64_t inv = ~m[i];
        m[i] = inv + carry;
        carry = (carry != 0 && m[i] == 0) ? 1 : 0;
      }
    }
    int p = -1;
    for (int i = kLimbs - 1; i >= 0; --i) {
      if (m[i] != 0) {
        p = i * 64 + 63 - std::countl_zero(m[i]);
        break;
      }
    }
    if (p < 0) return 0.0;
    if (p <= 51) {  // fits the subnormal range exactly
      return sign * std::ldexp(static_cast<double>(m[0]), -1074);
    }
    std::uint64_t mant = extract_bits(m, p - 52, 53);
    const bool round_bit = p >= 53 && get_bit(m, p - 53);
    bool sticky = false;
    if (round_bit) {
      for (int q = p - 54; q >= 0 && !sticky; --q) sticky = get_bit(m, q);
      // re-scan is O(bits); acceptable, round() is called once per aggregate
    }
    int e = p;
    if (round_bit && (sticky || (mant & 1))) {
      if (++mant == (1ULL << 53)) {
        mant = 1ULL << 52;
        ++e;
      }
    }
    return sign * std::ldexp(static_cast<double>(mant), (e - 52) - 1074);
  }

  void clear() { limbs_.fill(0); }

  bool operator==(const ExactAccumulator&) const = default;

 private:
  void add_at(int limb, std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t carry = 0;
    carry = add_word(limb, lo, 0);
    carry = add_word(limb + 1, hi, carry);
    for (int i = limb + 2; i < kLimbs && carry; ++i) carry = add_word(i, 0, carry);
  }
  void sub_at(int limb, std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t borrow = 0;
    borrow = sub_word(limb, lo, 0);
    borrow = sub_word(limb + 1, hi, borrow);
    for (int i = limb + 2; i < kLimbs && borrow; ++i) borrow = sub_word(i, 0, borrow);
  }
  std::uint64_t add_word(int i, std::uint64_t v, std::uint64_t carry_in) {
    const std::uint64_t before = limbs_[i];
    limbs_[i] = before + v;
    std::uint64_t carry = limbs_[i] < before ? 1 : 0;
    if (carry_in) {
      const std::uint64_t b2 = limbs_[i];
      limbs_[i] = b2 + 1;
      if (limbs_[i] == 0) carry = 1;
    }
    return carry;
  }
  std::uint64_t sub_word(int i, std::uint64_t v, std::uint64_t borrow_in) {
    const std::uint64_t before = limbs_[i];
    limbs_[i] = before - v;
    std::uint64_t borrow = before < v ? 1 : 0;
    if (borrow_in) {
      if (limbs_[i] == 0) borrow = 1;
      limbs_[i] -= 1;
    }
    return borrow;
  }
  static bool get_bit(const std::array<std::uint64_t, kLimbs>& m, int q) {
    return (m[q >> 6] >> (q & 63)) & 1;
  }
  static std::uint64_t extract_bits(const std::array<std::uint64_t, kLimbs>& m, int start,
                                    int count) {
    const int limb = start >> 6;
    const int shift = start & 63;
    std::uint64_t v = m[limb] >> shift;
    if (shift != 0 && limb + 1 < kLimbs) v |= m[limb + 1] << (64 - shift);
    if (count < 64) v &= (1ULL << count) - 1;
    return v;
  }

  std::array<std::uint64_t, kLimbs> limbs_{};
};

// Correctly rounded sum of a range of finite doubles, order-invariant.
template <typename It>
double exact_sum(It first, It last) {
  ExactAccumulator acc;
  for (; first != last; ++first) acc.add(*first);
  return acc.round();
}

}  // namespace fedlight
