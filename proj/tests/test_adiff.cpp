#include <doctest.h>

#include <cmath>
#include <vector>

#include "ensograph/adiff.hpp"
#include "ensograph/errors.hpp"
#include "test_support.hpp"

using namespace ensograph;
using namespace ensograph::adiff;
using ensograph::testing::away_from_zero;
using ensograph::testing::random_tensor;

namespace {

using VarD = Var<double>;
using Vars = std::span<const VarD>;

// Weighted sum with fixed random weights so every output coordinate matters.
VarD weighted_sum(Tape<double>& tape, const VarD& y, std::uint64_t seed) {
  Rng rng(seed ^ 0xABCDEFULL);
  Tensor<double> w(y.shape());
  for (auto& v : w.data()) v = rng.uniform(0.5, 1.5);
  return reduce_all(y * tape.constant(w), Reduction::Sum);
}

void expect_grad_ok(const ScalarFunction& f, const std::vector<Tensor<double>>& params) {
  const GradCheckReport report = grad_check(f, params, 1e-5, 1e-4);
  CHECK_MESSAGE(report.passed, "max relative error " << report.max_rel_error);
}

std::vector<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul small cases") {
  Tape<double> tape;
  auto eye = tape.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto x = tape.constant(Tensor<double>({2, 2}, {3, -1, 4, 2}));
  CHECK(matmul(eye, x).value() == x.value());

  auto a = tape.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto b = tape.constant(Tensor<double>({2, 1}, {5, 6}));
  const auto c = matmul(a, b).value();
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 17.0);
  CHECK(c[1] == 39.0);
}

TEST_CASE("matmul matches triple loop") {
  Rng rng(7);
  const auto a = random_tensor<double>(rng, {4, 5});
  const auto b = random_tensor<double>(rng, {5, 3});
  Tape<double> tape;
  const auto c = matmul(tape.constant(a), tape.constant(b)).value();
  const auto oracle = naive_matmul(a, b);
  for (std::size_t n = 0; n < oracle.size(); ++n) CHECK(c[n] == doctest::Approx(oracle[n]).epsilon(1e-12));
}

TEST_CASE("matmul broadcasts batch axes") {
  Rng rng(8);
  const auto a = random_tensor<double>(rng, {3, 2, 4});
  const auto b = random_tensor<double>(rng, {4, 5});
  Tape<double> tape;
  const auto c = matmul(tape.constant(a), tape.constant(b)).value();
  REQUIRE(c.shape() == Shape{3, 2, 5});
  for (std::size_t s = 0; s < 3; ++s) {
    Tensor<double> as({2, 4}, std::vector<double>(a.vec().begin() + s * 8, a.vec().begin() + (s + 1) * 8));
    const auto oracle = naive_matmul(as, b);
    for (std::size_t n = 0; n < 10; ++n) CHECK(c[s * 10 + n] == doctest::Approx(oracle[n]));
  }
  CHECK_THROWS_AS(matmul(tape.constant(a), tape.constant(random_tensor<double>(rng, {3, 5}))), UsageError);
}

TEST_CASE("unary ops values and analytic gradients") {
  Tape<double> tape;
  CHECK(relu(tape.constant(Tensor<double>({3}, {-1, 0, 2}))).value().vec() == std::vector<double>{0, 0, 2});

  auto x = tape.leaf(Tensor<double>::scalar(0.0), true);
  auto y = tanh(x);
  CHECK(y.value().item() == 0.0);
  CHECK(tape.backward(y)[x].item() == doctest::Approx(1.0));

  auto z = tape.leaf(Tensor<double>::scalar(0.0), true);
  auto s = sigmoid(z);
  CHECK(s.value().item() == 0.5);
  CHECK(tape.backward(s)[z].item() == doctest::Approx(0.25));

  // relu'(0) is defined as 0.
  auto r = tape.leaf(Tensor<double>::scalar(0.0), true);
  CHECK(tape.backward(relu(r))[r].item() == 0.0);

  auto n = tape.leaf(Tensor<double>({2}, {1.5, -2.0}), true);
  auto neg = -n;
  CHECK(neg.value().vec() == std::vector<double>{-1.5, 2.0});
  auto ab = abs(tape.leaf(Tensor<double>({2}, {1.5, -2.0})));
  CHECK(ab.value().vec() == std::vector<double>{1.5, 2.0});
}

TEST_CASE("binary ops and broadcasting") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2}, {1, 2}));
  auto b = tape.constant(Tensor<double>({2}, {3, 4}));
  CHECK((a + b).value().vec() == std::vector<double>{4, 6});
  CHECK((tape.constant(Tensor<double>({1}, {2})) * tape.constant(Tensor<double>({1}, {0}))).value()[0] == 0.0);

  auto m = tape.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}), true);
  auto row = tape.leaf(Tensor<double>({1, 3}, {10, 20, 30}), true);
  auto sum = m + row;
  CHECK(sum.value().vec() == std::vector<double>{11, 22, 33, 14, 25, 36});
  const auto g = tape.backward(reduce_all(sum, Reduction::Sum));
  // Broadcast operand collects the column sums of the upstream gradient.
  CHECK(g[row].vec() == std::vector<double>{2, 2, 2});
  CHECK(g[m].vec() == std::vector<double>(6, 1.0));

  CHECK(broadcast_shape({4, 1, 3}, {2, 1}) == Shape{4, 2, 3});
  CHECK_THROWS_AS((void)broadcast_shape({2, 3}, {4}), UsageError);
}

TEST_CASE("dilated_conv1d small cases and oracle") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 1, 1, 4}, {1, 2, 3, 4}));
  auto k = tape.constant(Tensor<double>({1, 1, 1, 2}, {1, 1}));
  CHECK(dilated_conv1d(x, k, 1).value().vec() == std::vector<double>{3, 5, 7});

  Rng rng(3);
  const auto xin = random_tensor<double>(rng, {2, 3, 4, 5});
  Tensor<double> eye({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) eye.at({c, c, 0, 0}) = 1.0;
  CHECK(dilated_conv1d(tape.constant(xin), tape.constant(eye), 1).value() == xin);

  const auto kernel = random_tensor<double>(rng, {2, 3, 1, 2});
  const auto out = dilated_conv1d(tape.constant(xin), tape.constant(kernel), 2).value();
  REQUIRE(out.shape() == Shape{2, 2, 4, 3});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t co = 0; co < 2; ++co)
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t t = 0; t < 3; ++t) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < 3; ++ci)
            for (std::size_t q = 0; q < 2; ++q) acc += kernel.at({co, ci, 0, q}) * xin.at({b, ci, n, t + 2 * q});
          CHECK(out.at({b, co, n, t}) == doctest::Approx(acc).epsilon(1e-12));
        }
  CHECK_THROWS_AS(dilated_conv1d(tape.constant(xin), tape.constant(random_tensor<double>(rng, {2, 3, 1, 4})), 2),
                  UsageError);
}

TEST_CASE("reductions") {
  Tape<double> tape;
  CHECK(reduce_all(tape.constant(Tensor<double>({3}, {1, 2, 3})), Reduction::Sum).value().item() == 6.0);
  CHECK(reduce_all(tape.constant(Tensor<double>({2, 2}, 2.5)), Reduction::Mean).value().item() == 2.5);
  auto x = tape.leaf(Tensor<double>({4}, {1, 5, 2, 8}), true);
  const auto g = tape.backward(reduce_all(x, Reduction::Mean));
  CHECK(g[x].vec() == std::vector<double>(4, 0.25));

  auto m = tape.constant(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  const std::size_t axis1[] = {1};
  CHECK(reduce(m, axis1, Reduction::Sum).value().vec() == std::vector<double>{6, 15});
  CHECK(reduce(m, axis1, Reduction::Mean, true).value().shape() == Shape{2, 1});
}

TEST_CASE("backward basics") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::scalar(3.0), true);
  CHECK(tape.backward(x * x)[x].item() == 6.0);
  CHECK(tape.size() == 0);

  // Handles from a cleared tape are detached.
  CHECK_THROWS_AS((void)x.value(), UsageError);

  auto a = tape.leaf(Tensor<double>::scalar(2.0), true);
  auto unused = tape.leaf(Tensor<double>({2}, {1.0, 1.0}), true);
  const auto g = tape.backward(a * a);
  CHECK(g[unused].vec() == std::vector<double>{0.0, 0.0});
}

constexpr std::uint64_t kSeeds = 10;

TEST_CASE("gradient check: matmul") {
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    expect_grad_ok([seed](Tape<double>& t, Vars p) { return weighted_sum(t, matmul(p[0], p[1]), seed); },
                   {random_tensor<double>(rng, {2, 3, 4}), random_tensor<double>(rng, {4, 2})});
  }
}

TEST_CASE("gradient check: transpose") {
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    expect_grad_ok([seed](Tape<double>& t, Vars p) { return weighted_sum(t, transpose(p[0]), seed); },
                   {random_tensor<double>(rng, {2, 3, 4})});
  }
}

TEST_CASE("gradient check: unary") {
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    for (Unary f : {Unary::Relu, Unary::Tanh, Unary::Sigmoid, Unary::Neg, Unary::Abs}) {
      expect_grad_ok([seed, f](Tape<double>& t, Vars p) { return weighted_sum(t, apply_unary(p[0], f), seed); },
                     {away_from_zero(rng, {3, 4})});
    }
  }
}

TEST_CASE("gradient check: binary with broadcasting") {
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    for (Binary f : {Binary::Add, Binary::Sub, Binary::Mul, Binary::Div}) {
      expect_grad_ok(
          [seed, f](Tape<double>& t, Vars p) { return weighted_sum(t, combine_binary(p[0], p[1], f), seed); },
          {random_tensor<double>(rng, {2, 3, 4}), away_from_zero(rng, {3, 1}, 0.5)});
    }
  }
}

TEST_CASE("gradient check: dilated_conv1d") {
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    for (std::size_t d : {1, 2}) {
      expect_grad_ok(
          [seed, d](Tape<double>& t, Vars p) { return weighted_sum(t, dilated_conv1d(p[0], p[1], d), seed); },
          {random_tensor<double>(rng, {2, 3, 2, 5}), random_tensor<double>(rng, {2, 3, 1, 2})});
    }
  }
}

TEST_CASE("gradient check: reduce") {
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    const std::size_t axes[] = {0, 2};
    for (Reduction f : {Reduction::Sum, Reduction::Mean}) {
      expect_grad_ok([seed, f, &axes](Tape<double>& t,
                                      Vars p) { return weighted_sum(t, reduce(p[0], axes, f, true), seed); },
                     {random_tensor<double>(rng, {2, 3, 4})});
      expect_grad_ok([f](Tape<double>&, Vars p) { return reduce_all(p[0] * p[0], f); },
                     {random_tensor<double>(rng, {3, 2})});
    }
  }
}

TEST_CASE("gradient check: scale reshape slice") {
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    expect_grad_ok(
        [seed](Tape<double>& t, Vars p) {
          return weighted_sum(t, slice(reshape(scale(p[0], 1.7), {4, 6}), 1, 2, 3), seed);
        },
        {random_tensor<double>(rng, {2, 3, 4})});
  }
}

TEST_CASE("gradient check: two-layer composite") {
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    expect_grad_ok(
        [](Tape<double>&, Vars p) {
          const auto h = tanh(matmul(p[0], p[1]) + p[2]);
          const auto y = sigmoid(matmul(h, p[3]));
          return reduce_all(abs(y - p[4]), Reduction::Mean);
        },
        {random_tensor<double>(rng, {5, 4}), random_tensor<double>(rng, {4, 3}), random_tensor<double>(rng, {1, 3}),
         random_tensor<double>(rng, {3, 2}), random_tensor<double>(rng, {5, 2}, 2.0, 3.0)});
  }
}

TEST_CASE("grad_check passes a quadratic form at tight tolerance") {
  Rng rng(11);
  Tensor<double> q({3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) q.at({i, j}) = q.at({j, i}) = rng.uniform(-1, 1);
  const auto report = grad_check(
      [&q](Tape<double>& t, Vars p) {
        return reduce_all(matmul(transpose(p[0]), matmul(t.constant(q), p[0])), Reduction::Sum);
      },
      std::vector<Tensor<double>>{random_tensor<double>(rng, {3, 1})}, 1e-5, 1e-6);
  CHECK(report.passed);
}

TEST_CASE("grad_check flags a corrupted backward rule") {
  // y = x^2 recorded with the derivative deliberately off by a factor 3.
  const auto report = grad_check(
      [](Tape<double>& t, Vars p) {
        Tensor<double> v = p[0].value();
        for (auto& e : v.data()) e = e * e;
        auto y = t.record(std::move(v), {p[0]}, [](const BackwardContext<double>& c) {
          for (std::size_t n = 0; n < c.grad_out.size(); ++n) {
            (*c.input_grads[0])[n] += 6.0 * (*c.inputs[0])[n] * c.grad_out[n];
          }
        });
        return reduce_all(y, Reduction::Sum);
      },
      std::vector<Tensor<double>>{Tensor<double>({2}, {0.7, -1.3})});
  CHECK_FALSE(report.passed);
  CHECK(report.max_rel_error > 0.5);
}

TEST_CASE("forward is independent of requires_grad flags") {
  Rng rng(5);
  const auto a = random_tensor<double>(rng, {3, 4});
  const auto b = random_tensor<double>(rng, {4, 2});
  Tape<double> t1;
  Tape<double> t2;
  const auto y1 = tanh(matmul(t1.leaf(a, true), t1.leaf(b, true))).value();
  const auto y2 = tanh(matmul(t2.constant(a), t2.constant(b))).value();
  CHECK(y1 == y2);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(9);
  const auto x0 = random_tensor<double>(rng, {3, 3});
  const double ca = 1.7, cb = -0.4;
  auto grad_of = [&](double wa, double wb) {
    Tape<double> tape;
    auto x = tape.leaf(x0, true);
    const auto f = reduce_all(tanh(matmul(x, x)), Reduction::Sum);
    const auto g = reduce_all(sigmoid(x) * x, Reduction::Mean);
    const auto loss = scale(f, wa) + scale(g, wb);
    return tape.backward(loss)[x];
  };
  const auto combined = grad_of(ca, cb);
  const auto gf = grad_of(1.0, 0.0);
  const auto gg = grad_of(0.0, 1.0);
  for (std::size_t n = 0; n < combined.size(); ++n) {
    CHECK(std::abs(combined[n] - (ca * gf[n] + cb * gg[n])) <= 1e-10);
  }
}

TEST_CASE("forward and backward are bitwise deterministic") {
  auto run = [] {
    Rng rng(42);
    const auto a = random_tensor<float>(rng, {2, 3, 4, 5});
    const auto k = random_tensor<float>(rng, {3, 3, 1, 2});
    Tape<float> tape;
    auto x = tape.leaf(a, true);
    auto w = tape.leaf(k, true);
    auto y = reduce_all(tanh(dilated_conv1d(x, w, 2)), Reduction::Mean);
    const float value = y.value().item();
    const auto g = tape.backward(y);
    return std::make_tuple(value, g[x], g[w]);
  };
  CHECK(run() == run());
}
