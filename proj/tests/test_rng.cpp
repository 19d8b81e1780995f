#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "looptwin/rng.hpp"

using namespace looptwin;

TEST_SUITE("rng") {

TEST_CASE("same seed reproduces the sequence") {
  Rng a(123), b(123);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("substreams are stable and independent of draw order") {
  Rng root(9);
  Rng s1 = root.substream("alpha", 3);
  root.next_u64();
  Rng s2 = root.substream("alpha", 3);
  CHECK(s1.next_u64() == s2.next_u64());
  Rng s3 = root.substream("beta", 3);
  Rng s4 = root.substream("alpha", 4);
  std::set<std::uint64_t> firsts = {Rng(root.substream("alpha", 3)).next_u64(), s3.next_u64(),
                                    s4.next_u64()};
  CHECK(firsts.size() == 3);
}

TEST_CASE("uniform stays in the half-open unit interval") {
  Rng r(5);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("uniform_int covers inclusive bounds") {
  Rng r(7);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 400; ++i) seen.insert(r.uniform_int(-2, 3));
  CHECK(seen.size() == 6);
  CHECK(*seen.begin() == -2);
  CHECK(*seen.rbegin() == 3);
  CHECK_THROWS_AS(r.uniform_int(4, 3), std::invalid_argument);
}

TEST_CASE("poisson matches its mean and variance") {
  Rng r(11);
  const double lambda = 3.5;
  const int n = 20000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    int k = r.poisson(lambda);
    sum += k;
    sq += static_cast<double>(k) * k;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean - lambda) < 4.0 * std::sqrt(lambda / n));
  CHECK(std::abs(var - lambda) < 0.25);
}

TEST_CASE("poisson quantile is monotone in u and in lambda") {
  for (double lambda : {0.3, 1.0, 4.0}) {
    int prev = 0;
    for (double u = 0.01; u < 1.0; u += 0.01) {
      int k = Rng::poisson_inverse(lambda, u);
      CHECK(k >= prev);
      prev = k;
    }
  }
  for (double u : {0.1, 0.5, 0.9}) {
    int prev = 0;
    for (double lambda = 0.1; lambda < 8.0; lambda += 0.1) {
      int k = Rng::poisson_inverse(lambda, u);
      CHECK(k >= prev);
      prev = k;
    }
  }
  CHECK(Rng::poisson_inverse(0.0, 0.99) == 0);
  CHECK_THROWS_AS(Rng::poisson_inverse(-1.0, 0.5), std::invalid_argument);
}

TEST_CASE("simplex draws are non-negative and sum to one") {
  Rng r(13);
  for (int i = 0; i < 200; ++i) {
    auto v = r.simplex(3);
    double s = 0;
    for (double x : v) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("truncated normal respects its bounds") {
  Rng r(17);
  for (int i = 0; i < 2000; ++i) {
    double x = r.truncated_normal(1.2, 0.3, 0.5, 2.0);
    CHECK(x >= 0.5);
    CHECK(x <= 2.0);
  }
}

}  // TEST_SUITE
