#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "fedlight/rng.hpp"

using namespace fedlight;

TEST_CASE("identical keys give identical streams") {
  RngStream a(42, "init", {7});
  RngStream b(42, "init", {7});
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("any key component separates streams") {
  RngStream base(42, "init", {7});
  RngStream seed(43, "init", {7});
  RngStream purpose(42, "neg", {7});
  RngStream subkey(42, "init", {8});
  RngStream longer(42, "init", {7, 0});
  const std::uint64_t x = base.next_u64();
  CHECK(x != seed.next_u64());
  CHECK(x != purpose.next_u64());
  CHECK(x != subkey.next_u64());
  CHECK(x != longer.next_u64());
}

TEST_CASE("next_double stays in the unit interval") {
  RngStream rng(1, "test");
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.next_double();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("uniform respects bounds") {
  RngStream rng(2, "test");
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.uniform(-3.0, 5.0);
    CHECK(x >= -3.0);
    CHECK(x < 5.0);
  }
}

TEST_CASE("uniform_index covers the range without bias artifacts") {
  RngStream rng(3, "test");
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 70000; ++i) ++hits[rng.uniform_index(7)];
  for (int h : hits) {
    CHECK(h > 9000);  // expectation 10000
    CHECK(h < 11000);
  }
  CHECK_THROWS(rng.uniform_index(0));
}

TEST_CASE("normal has the requested moments") {
  RngStream rng(4, "test");
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(0.0, 1.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("fill_bytes is deterministic and spread") {
  std::uint8_t a[64], b[64];
  RngStream(9, "bytes", {1}).fill_bytes(a, sizeof a);
  RngStream(9, "bytes", {1}).fill_bytes(b, sizeof b);
  CHECK(std::equal(a, a + sizeof a, b));
  std::set<std::uint8_t> distinct(a, a + sizeof a);
  CHECK(distinct.size() > 40);  // 64 random bytes rarely collide this much
}
