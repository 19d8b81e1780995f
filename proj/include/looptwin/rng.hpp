#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace looptwin {

// Deterministic random streams. All draws go through hand-rolled transforms
// (std::*_distribution is implementation-defined, which would break
// cross-platform reproducibility of corpora and golden files).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

  // Derive an independent child stream from a tag and index. Streams derived
  // with distinct (tag, index) pairs never collide in practice.
  Rng substream(std::string_view tag, std::uint64_t index = 0) const {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : tag) h = (h ^ static_cast<std::uint8_t>(c)) * 1099511628211ull;
    std::uint64_t mixed = splitmix(seed_of_state_ ^ h);
    mixed = splitmix(mixed ^ (index * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
    return Rng(mixed, 0);
  }

  std::uint64_t next_u64() {
    // xorshift* step
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    // modulo bias is < 2^-53 for the spans used here
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  double normal(double mean = 0.0, double sd = 1.0) {
    // Box-Muller, cosine branch only; stateless between calls.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  double truncated_normal(double mean, double sd, double lo, double hi) {
    for (int i = 0; i < 1000; ++i) {
      double x = normal(mean, sd);
      if (x >= lo && x <= hi) return x;
    }
    return std::clamp(mean, lo, hi);  // pathological sd; fall back to the mode
  }

  // Inverse-CDF Poisson sample driven by a single uniform. Monotone
  // non-decreasing in lambda for a fixed uniform draw, which gives coupled
  // arrival streams across demand levels.
  static int poisson_inverse(double lambda, double u) {
    if (lambda < 0.0) throw std::invalid_argument("poisson_inverse: negative rate");
    if (lambda == 0.0) return 0;
    double p = std::exp(-lambda);
    double cdf = p;
    int k = 0;
    while (u >= cdf && k < 1000) {
      ++k;
      p *= lambda / k;
      cdf += p;
    }
    return k;
  }

  int poisson(double lambda) { return poisson_inverse(lambda, uniform()); }

  // Uniform point on the simplex (flat Dirichlet) of the given dimension.
  std::vector<double> simplex(std::size_t dim) {
    std::vector<double> e(dim);
    double total = 0.0;
    for (auto& v : e) {
      double u = uniform();
      if (u <= 0.0) u = 0x1.0p-53;
      v = -std::log(u);
      total += v;
    }
    for (auto& v : e) v /= total;
    return e;
  }

  // Dirichlet with integer-ish concentration via averaged simplex draws is
  // overkill here; gamma sampling keeps the spread controllable.
  std::vector<double> dirichlet(const std::vector<double>& alpha) {
    std::vector<double> g(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      g[i] = gamma(alpha[i]);
      total += g[i];
    }
    if (total <= 0.0) return std::vector<double>(alpha.size(), 1.0 / alpha.size());
    for (auto& v : g) v /= total;
    return g;
  }

  // Marsaglia-Tsang for shape >= 1, boosting for shape < 1.
  double gamma(double shape) {
    if (shape <= 0.0) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
      double u = uniform();
      if (u <= 0.0) u = 0x1.0p-53;
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u <= 0.0) u = 0x1.0p-53;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::uint64_t seed_value() const { return seed_of_state_; }

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  Rng(std::uint64_t mixed, int) : state_(mixed ? mixed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t state_;
  std::uint64_t seed_of_state_ = state_;
};

}  // namespace looptwin
