#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedlight {

using Bytes = std::vector<std::uint8_t>;

// All wire integers are little-endian; f64 as IEEE bits little-endian.
// Vectors are length-prefixed (u32 count), so an empty vector is 4 zero bytes.

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::uint8_t* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void raw(const Bytes& b) { raw(b.data(), b.size()); }
  void bytes(const Bytes& b) {  // length-prefixed
    u32(static_cast<std::uint32_t>(b.size()));
    raw(b);
  }
  void vec(const std::vector<double>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) f64(x);
  }
  Bytes take() { return std::move(buf_); }
  const Bytes& data() const { return buf_; }

 private:
  Bytes buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const Bytes& b) : p_(b.data()), end_(b.data() + b.size()) {}
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), end_(p + n) {}

  std::uint8_t u8() {
    need(1);
    return *p_++;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[i]) << (8 * i);
    p_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[i]) << (8 * i);
    p_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  Bytes raw(std::size_t n) {
    need(n);
    Bytes out(p_, p_ + n);
    p_ += n;
    return out;
  }
  Bytes bytes() { return raw(u32()); }
  std::vector<double> vec() {
    const std::uint32_t n = u32();
    need(static_cast<std::size_t>(n) * 8);
    std::vector<double> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(f64());
    return out;
  }
  bool done() const { return p_ == end_; }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }
  void expect_done() const {
    if (!done()) throw std::runtime_error("malformed payload: trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw std::runtime_error("malformed payload: truncated");
  }
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

inline Bytes serialize_vec(const std::vector<double>& v) {
  ByteWriter w;
  w.vec(v);
  return w.take();
}

inline std::vector<double> deserialize_vec(const Bytes& b) {
  ByteReader r(b);
  auto v = r.vec();
  r.expect_done();
  return v;
}

inline std::string to_hex(const Bytes& b) {
  static const char* d = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (std::uint8_t c : b) {
    s.push_back(d[c >> 4]);
    s.push_back(d[c & 0xf]);
  }
  return s;
}

// True if `needle` occurs as a contiguous byte substring of `hay`.
inline bool contains_bytes(const Bytes& hay, const Bytes& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::memcmp(hay.data() + i, needle.data(), needle.size()) == 0) return true;
  }
  return false;
}

}  // namespace fedlight
