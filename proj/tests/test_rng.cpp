#include "distillery/rng.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <set>

#include "doctest.h"

using distillery::Rng;

TEST_CASE("same key reproduces the same sequence") {
  Rng a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(a.counter() == 100);
}

TEST_CASE("different seeds and streams diverge") {
  Rng a(42, 7), b(43, 7), c(42, 8);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u64();
    same_ab += x == b.next_u64();
    same_ac += x == c.next_u64();
  }
  CHECK(same_ab == 0);
  CHECK(same_ac == 0);
}

TEST_CASE("substreams do not depend on how far the parent has advanced") {
  Rng parent(1, 2);
  const Rng early = parent.substream("env");
  for (int i = 0; i < 10; ++i) parent.next_u64();
  const Rng late = parent.substream("env");
  Rng x = early, y = late;
  for (int i = 0; i < 10; ++i) CHECK(x.next_u64() == y.next_u64());
  Rng named = parent.substream("action");
  Rng other = parent.substream("env");
  CHECK(named.next_u64() != other.next_u64());
}

TEST_CASE("uniform stays in range with the right mean") {
  Rng rng(9, 0);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-2.0, 3.0);
    REQUIRE(v >= -2.0);
    REQUIRE(v < 3.0);
  }
}

TEST_CASE("below is unbiased over a small range") {
  Rng rng(3, 3);
  std::array<int, 6> counts{};
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[rng.below(6)];
  for (int c : counts) CHECK(std::abs(c - n / 6) < 400);
  CHECK_THROWS(rng.below(0));
}

TEST_CASE("sample_categorical follows the given probabilities") {
  Rng rng(11, 0);
  const std::array<double, 3> p{0.2, 0.0, 0.8};
  std::array<int, 3> counts{};
  const int n = 50000;
  for (int i = 0; i < n; ++i) ++counts[distillery::sample_categorical(p, rng)];
  CHECK(counts[1] == 0);
  CHECK(static_cast<double>(counts[0]) / n == doctest::Approx(0.2).epsilon(0.03));
  const std::array<double, 2> bad{-0.1, 1.1};
  CHECK_THROWS(distillery::sample_categorical(bad, rng));
}

TEST_CASE("shuffle is a seeded permutation") {
  std::vector<std::size_t> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  Rng r1(5, 5), r2(5, 5);
  distillery::shuffle(a, r1);
  distillery::shuffle(b, r2);
  CHECK(a == b);
  std::set<std::size_t> seen(a.begin(), a.end());
  CHECK(seen.size() == 50);
  std::vector<std::size_t> sorted(50);
  std::iota(sorted.begin(), sorted.end(), 0);
  CHECK(a != sorted);
}

TEST_CASE("stream_id is FNV-1a") {
  CHECK(distillery::stream_id("") == 0xcbf29ce484222325ULL);
  CHECK(distillery::stream_id("a") == 0xaf63dc4c8601ec8cULL);
}
