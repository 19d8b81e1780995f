#include <doctest.h>

#include <cmath>
#include <vector>

#include "looptwin/ndiff.hpp"

using namespace looptwin;

namespace {

Ref<double> filled(Tape<double>& t, Shape shape, std::vector<double> vals,
                   const std::string& name = "x") {
  auto x = t.leaf(shape, true, name);
  REQUIRE(x->v.size() == vals.size());
  x->v = std::move(vals);
  return x;
}

// Scalar objective: sum of all entries.
Ref<double> total(Tape<double>& t, const Ref<double>& x) {
  int n = static_cast<int>(x->numel());
  auto flat = t.reshape(x, {1, n});
  auto ones = t.leaf({n, 1}, false, "ones");
  std::fill(ones->v.begin(), ones->v.end(), 1.0);
  return t.reshape(t.matmul(flat, ones), {1});
}

}  // namespace

TEST_SUITE("ndiff") {

TEST_CASE("matmul backward equals the transpose products") {
  Tape<double> tape;
  auto a = filled(tape, {2, 3}, {1, 2, 3, 4, 5, 6}, "a");
  auto b = filled(tape, {3, 2}, {1, -1, 0.5, 2, -2, 1}, "b");
  auto c = tape.matmul(a, b);
  CHECK(c->v[0] == doctest::Approx(1 * 1 + 2 * 0.5 + 3 * -2));
  tape.backward(total(tape, c));
  // dL/dA = 1 * B^T, dL/dB = A^T * 1 with 1 the all-ones matrix.
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) {
      double want = b->v[k * 2 + 0] + b->v[k * 2 + 1];
      CHECK(a->g[i * 3 + k] == doctest::Approx(want).epsilon(1e-12));
    }
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 2; ++j) {
      double want = a->v[0 * 3 + k] + a->v[1 * 3 + k];
      CHECK(b->g[k * 2 + j] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("scaling the loss scales every gradient") {
  auto run = [](double factor) {
    Tape<double> tape;
    auto x = filled(tape, {2, 2}, {0.3, -0.7, 1.1, 0.2});
    auto y = tape.mul(x, x);
    auto loss = tape.scale(total(tape, y), factor);
    tape.backward(loss);
    return x->g;
  };
  auto g1 = run(1.0);
  auto g2 = run(2.0);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(2.0 * g1[i]));
}

TEST_CASE("relu and leaky_relu use the zero subgradient at the kink") {
  Tape<double> tape;
  auto x = filled(tape, {4}, {-1.0, 0.0, 2.0, -0.5});
  auto y = tape.relu(x);
  CHECK(y->v == std::vector<double>{0, 0, 2, 0});
  tape.backward(total(tape, y));
  CHECK(x->g == std::vector<double>{0, 0, 1, 0});

  Tape<double> tape2;
  auto x2 = filled(tape2, {3}, {-2.0, 3.0, -0.25});
  auto y2 = tape2.leaky_relu(x2, 0.1);
  CHECK(y2->v[0] == doctest::Approx(-0.2));
  CHECK(y2->v[1] == doctest::Approx(3.0));
  tape2.backward(total(tape2, y2));
  CHECK(x2->g[0] == doctest::Approx(0.1));
  CHECK(x2->g[1] == doctest::Approx(1.0));
}

TEST_CASE("softmax_last rows are simplexes and masked entries vanish") {
  Tape<double> tape;
  auto x = filled(tape, {2, 3}, {0.1, 0.9, -0.4, 2.0, 2.0, 2.0});
  std::vector<double> mask = {0, -1e30, 0, 0, 0, -1e30};
  auto p = tape.softmax_last(x, &mask);
  CHECK(p->v[1] == 0.0);
  CHECK(p->v[5] == 0.0);
  CHECK(p->v[0] + p->v[1] + p->v[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p->v[3] + p->v[4] + p->v[5] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p->v[3] == doctest::Approx(0.5));
  // Uniform upstream gradient meets the zero-sum softmax identity.
  tape.backward(total(tape, p));
  CHECK(x->g[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(x->g[1] == 0.0);
}

TEST_CASE("edge_softmax normalizes per destination") {
  Tape<double> tape;
  auto s = filled(tape, {5}, {1.0, 2.0, -1.0, 0.5, 0.5});
  std::vector<int> dst = {0, 0, 2, 2, 2};
  auto a = tape.edge_softmax(s, dst, 3);
  CHECK(a->v[0] + a->v[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a->v[2] + a->v[3] + a->v[4] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a->v[3] == doctest::Approx(a->v[4]).epsilon(1e-12));
  double z = std::exp(1.0) + std::exp(2.0);
  CHECK(a->v[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
}

TEST_CASE("mse_masked averages squared error over selected entries") {
  Tape<double> tape;
  auto pred = filled(tape, {2, 2}, {1.0, 2.0, 3.0, 4.0});
  std::vector<double> target = {0.0, 2.0, 0.0, 1.0};
  std::vector<double> mask = {1, 1, 0, 1};
  auto loss = tape.mse_masked(pred, target, mask);
  // ((1)^2 + 0 + (3)^2 masked out... entries 0,1,3: 1 + 0 + 9) / 3
  CHECK(loss->v[0] == doctest::Approx((1.0 + 0.0 + 9.0) / 3.0).epsilon(1e-12));
  tape.backward(loss);
  CHECK(pred->g[0] == doctest::Approx(2.0 * 1.0 / 3.0));
  CHECK(pred->g[2] == 0.0);
  CHECK(pred->g[3] == doctest::Approx(2.0 * 3.0 / 3.0));
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  Tape<double> tape;
  auto x = filled(tape, {2}, {1.0, -2.0});
  auto l1 = total(tape, tape.mul(x, x));
  tape.backward(l1);
  auto once = x->g;
  auto l2 = total(tape, tape.mul(x, x));
  tape.backward(l2);
  for (std::size_t i = 0; i < once.size(); ++i)
    CHECK(x->g[i] == doctest::Approx(2.0 * once[i]));
  x->zero_grad();
  CHECK(x->g == std::vector<double>{0.0, 0.0});
}

TEST_CASE("shape mismatches are rejected") {
  Tape<double> tape;
  auto a = tape.leaf({2, 3}, true);
  auto b = tape.leaf({2, 2}, true);
  CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(tape.reshape(a, {4, 2}), std::invalid_argument);
}

TEST_CASE("transpose, slice and concat move values where expected") {
  Tape<double> tape;
  auto a = filled(tape, {2, 3}, {1, 2, 3, 4, 5, 6});
  auto at = tape.transpose(a);
  CHECK(at->shape == Shape{3, 2});
  CHECK(at->v == std::vector<double>{1, 4, 2, 5, 3, 6});
  auto sl = tape.slice_cols(a, 1, 3);
  CHECK(sl->shape == Shape{2, 2});
  CHECK(sl->v == std::vector<double>{2, 3, 5, 6});
  auto cc = tape.concat_last({sl, sl});
  CHECK(cc->shape == Shape{2, 4});
  CHECK(cc->v == std::vector<double>{2, 3, 2, 3, 5, 6, 5, 6});
  tape.backward(total(tape, cc));
  CHECK(a->g == std::vector<double>{0, 2, 2, 0, 2, 2});
}

TEST_CASE("gather scatter and row scaling agree with direct sums") {
  Tape<double> tape;
  auto x = filled(tape, {3, 2}, {1, 2, 3, 4, 5, 6});
  std::vector<int> rows = {2, 0, 2};
  auto gathered = tape.gather_rows(x, rows);
  CHECK(gathered->v == std::vector<double>{5, 6, 1, 2, 5, 6});
  auto scattered = tape.scatter_add_rows(gathered, rows, 3);
  CHECK(scattered->v == std::vector<double>{1, 2, 0, 0, 10, 12});
  tape.backward(total(tape, scattered));
  CHECK(x->g == std::vector<double>{1, 1, 0, 0, 2, 2});

  Tape<double> tape2;
  auto y = filled(tape2, {2, 2}, {1, 2, 3, 4});
  auto w = filled(tape2, {2}, {0.5, -1.0}, "w");
  auto scaled = tape2.scale_rows(y, w);
  CHECK(scaled->v == std::vector<double>{0.5, 1.0, -3.0, -4.0});
  tape2.backward(total(tape2, scaled));
  CHECK(w->g == std::vector<double>{3.0, 7.0});
  CHECK(y->g == std::vector<double>{0.5, 0.5, -1.0, -1.0});
}

TEST_CASE("dropout in eval mode is the identity") {
  Tape<double> tape;
  auto x = filled(tape, {100}, std::vector<double>(100, 1.0));
  auto y = tape.dropout(x, 0.5, false, nullptr);
  CHECK(y->v == x->v);
}

TEST_CASE("dropout in train mode zeroes and rescales") {
  Tape<double> tape;
  Rng rng(99);
  auto x = filled(tape, {2000}, std::vector<double>(2000, 1.0));
  double p = 0.25;
  auto y = tape.dropout(x, p, true, &rng);
  int zeros = 0;
  for (double v : y->v) {
    if (v == 0.0)
      ++zeros;
    else
      CHECK(v == doctest::Approx(1.0 / (1.0 - p)).epsilon(1e-12));
  }
  CHECK(zeros > 2000 * p * 0.6);
  CHECK(zeros < 2000 * p * 1.4);
  tape.backward(total(tape, y));
  for (std::size_t i = 0; i < x->g.size(); ++i) {
    if (y->v[i] == 0.0)
      CHECK(x->g[i] == 0.0);
    else
      CHECK(x->g[i] == doctest::Approx(1.0 / (1.0 - p)));
  }
}

TEST_CASE("bmm multiplies each batch slice") {
  Tape<double> tape;
  auto a = filled(tape, {2, 2, 2}, {1, 0, 0, 1, 2, 0, 0, 2}, "a");
  auto b = filled(tape, {2, 2, 2}, {1, 2, 3, 4, 1, 2, 3, 4}, "b");
  auto c = tape.bmm(a, b, false);
  CHECK(c->v == std::vector<double>{1, 2, 3, 4, 2, 4, 6, 8});
  auto ct = tape.bmm(a, b, true);
  // Second slice: 2*I times B^T.
  CHECK(ct->v[4] == 2.0 * 1.0);
  CHECK(ct->v[5] == 2.0 * 3.0);
}

TEST_CASE("adam first step matches the closed form") {
  Tape<double> tape;
  auto p = tape.leaf({2}, true, "p");
  p->v = {1.0, -0.5};
  p->g = {0.3, -0.2};
  double lr = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Adam<double> adam(lr, beta1, beta2, eps);
  std::vector<Ref<double>> params = {p};
  adam.step(params);
  for (int i = 0; i < 2; ++i) {
    double g = i == 0 ? 0.3 : -0.2;
    double m_hat = g;                 // m1 / (1 - beta1)
    double v_hat = g * g;             // v1 / (1 - beta2)
    double want = (i == 0 ? 1.0 : -0.5) - lr * m_hat / (std::sqrt(v_hat) + eps);
    CHECK(p->v[i] == doctest::Approx(want).epsilon(1e-12));
  }

  // Second step with the same gradient keeps the bias-corrected ratio.
  p->g = {0.3, -0.2};
  adam.step(params);
  double g = 0.3;
  double m2 = beta1 * (1 - beta1) * g + (1 - beta1) * g;
  double v2 = beta2 * (1 - beta2) * g * g + (1 - beta2) * g * g;
  double m_hat = m2 / (1 - beta1 * beta1);
  double v_hat = v2 / (1 - beta2 * beta2);
  double step1 = 1.0 - lr * g / (std::sqrt(g * g) + eps);
  double want = step1 - lr * m_hat / (std::sqrt(v_hat) + eps);
  CHECK(p->v[0] == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("adam rejects NaN gradients by parameter name") {
  Tape<double> tape;
  auto p = tape.leaf({1}, true, "enc_w");
  p->v = {1.0};
  p->g = {std::nan("")};
  Adam<double> adam(0.01);
  std::vector<Ref<double>> params = {p};
  CHECK_THROWS_WITH_AS(adam.step(params), doctest::Contains("enc_w"), std::runtime_error);
}

TEST_CASE("backward leaves leaf grads alone but re-zeroes op outputs") {
  Tape<double> tape;
  auto x = filled(tape, {2}, {1.0, 2.0});
  auto y = tape.mul(x, x);
  auto l1 = total(tape, y);
  tape.backward(l1);
  auto gx = x->g;
  // A second backward through a new head reuses y; its grad must not leak.
  auto l2 = total(tape, y);
  tape.backward(l2);
  for (std::size_t i = 0; i < gx.size(); ++i)
    CHECK(x->g[i] == doctest::Approx(2.0 * gx[i]).epsilon(1e-12));
}

}  // TEST_SUITE
