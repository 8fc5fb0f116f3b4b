#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fedlight {

using Vec = std::vector<double>;

inline void check_same_dim(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) throw std::runtime_error(std::string("shape mismatch: ") + what);
}

// y += a*x. The single fused loop everyone shares: identical bracketing on
// every code path is a correctness requirement, not a style choice.
inline void axpy(Vec& y, double a, const Vec& x) {
  check_same_dim(y, x, "axpy");
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += a * x[k];
}

inline void add_in_place(Vec& y, const Vec& x) {
  check_same_dim(y, x, "add");
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += x[k];
}

inline void scale_in_place(Vec& y, double a) {
  for (double& v : y) v *= a;
}

inline double dot(const Vec& a, const Vec& b) {
  check_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline Vec scaled(const Vec& x, double a) {
  Vec out(x);
  scale_in_place(out, a);
  return out;
}

}  // namespace fedlight
