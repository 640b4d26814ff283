#include <doctest.h>

#include <cmath>
#include <random>

#include "mmlego/tensor.hpp"
#include "oracles.hpp"

using namespace mmlego;

TEST_CASE("matmul identity and projector") {
  const Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  const Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  const Tensor r1 = matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r1.values()[i] == doctest::Approx(a.values()[i]));
  }
  const Tensor proj = Tensor::from_values({2, 2}, {1, 0, 0, 0});
  const Tensor b = Tensor::from_values({2, 2}, {5, 6, 7, 8});
  const Tensor r2 = matmul(proj, b);
  CHECK(r2.values()[0] == 5);
  CHECK(r2.values()[1] == 6);
  CHECK(r2.values()[2] == 0);
  CHECK(r2.values()[3] == 0);
}

TEST_CASE("matmul rejects mismatched inner dims") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), ShapeMismatchError);
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(7);
  Tensor a = Tensor::randn({3, 3}, rng);
  Tensor b = Tensor::randn({3, 3}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  {
    GradientTape tape;
    tape.backward(sum(matmul(a, b)));
  }
  const double err = oracles::max_grad_rel_error(
      [&] { return sum(matmul(a, b)).item(); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("softmax basics") {
  const Tensor uniform = softmax(Tensor::from_values({3}, {0, 0, 0}));
  for (double v : uniform.values()) CHECK(v == doctest::Approx(1.0 / 3.0));

  const Tensor extreme = softmax(Tensor::from_values({3}, {1000, 0, -1000}));
  CHECK(extreme.values()[0] == doctest::Approx(1.0));
  CHECK(extreme.values()[1] == doctest::Approx(0.0));
  CHECK(extreme.values()[2] == doctest::Approx(0.0));
}

TEST_CASE("softmax matches the high-precision oracle") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> dist(0.0, 3.0);
  std::vector<double> x(5);
  for (double& v : x) v = dist(rng);
  const Tensor y = softmax(Tensor::from_values({5}, x));
  const std::vector<double> ref = oracles::highprec_softmax(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(y.values()[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(13);
  const Tensor x = Tensor::randn({8, 13}, rng, 4.0);
  const Tensor y = softmax(x, -1);
  for (std::size_t r = 0; r < 8; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 13; ++j) s += y.at(r, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax along axis 0") {
  const Tensor x = Tensor::from_values({2, 2}, {0, 10, 0, -10});
  const Tensor y = softmax(x, 0);
  CHECK(y.at(0, 0) == doctest::Approx(0.5));
  CHECK(y.at(1, 0) == doctest::Approx(0.5));
  CHECK(y.at(0, 1) > 0.999);
}

TEST_CASE("layer_norm collapses constant rows to the bias") {
  const Tensor x = Tensor::from_values({1, 3}, {5, 5, 5});
  const Tensor y = layer_norm(x, Tensor::ones({3}), Tensor::zeros({3}), 1e-5);
  for (double v : y.values()) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("layer_norm hand-computed values") {
  const Tensor x = Tensor::from_values({1, 3}, {1, 2, 3});
  const Tensor y = layer_norm(x, Tensor::ones({3}), Tensor::zeros({3}), 1e-12);
  const double r = std::sqrt(1.5);
  CHECK(y.values()[0] == doctest::Approx(-r).epsilon(1e-6));
  CHECK(y.values()[1] == doctest::Approx(0.0));
  CHECK(y.values()[2] == doctest::Approx(r).epsilon(1e-6));
}

TEST_CASE("layer_norm gradient check") {
  std::mt19937_64 rng(17);
  Tensor x = Tensor::randn({4, 6}, rng);
  Tensor g = Tensor::randn({6}, rng);
  Tensor b = Tensor::randn({6}, rng);
  x.set_requires_grad(true);
  g.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor weights = Tensor::randn({4, 6}, rng);  // break symmetry in the loss
  auto forward = [&] {
    return sum(mul(layer_norm(x, g, b, 1e-5), weights)).item();
  };
  {
    GradientTape tape;
    tape.backward(sum(mul(layer_norm(x, g, b, 1e-5), weights)));
  }
  CHECK(oracles::max_grad_rel_error(forward, {x, g, b}) < 1e-5);
}

TEST_CASE("selu fixed points") {
  const Tensor x = Tensor::from_values({3}, {0.0, 1.0, -1.0});
  const Tensor y = selu(x);
  CHECK(y.values()[0] == 0.0);
  CHECK(y.values()[1] == doctest::Approx(1.0507009873554805));
  CHECK(y.values()[2] == doctest::Approx(-1.111330).epsilon(1e-6));
}

TEST_CASE("backward of sum gives all-ones") {
  Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  GradientTape tape;
  tape.backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares") {
  Tensor x = Tensor::from_values({3}, {1, 2, 3});
  x.set_requires_grad(true);
  GradientTape tape;
  tape.backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2));
  CHECK(x.grad()[1] == doctest::Approx(4));
  CHECK(x.grad()[2] == doctest::Approx(6));
}

TEST_CASE("repeated backward accumulates") {
  Tensor x = Tensor::from_values({2}, {1, 1});
  x.set_requires_grad(true);
  GradientTape tape;
  const Tensor loss = sum(x);
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  x.zero_grad();
  CHECK(!x.has_grad());
}

TEST_CASE("non-scalar loss is rejected") {
  Tensor x = Tensor::zeros({3});
  x.set_requires_grad(true);
  GradientTape tape;
  CHECK_THROWS_AS(tape.backward(x), NonScalarLossError);
}

TEST_CASE("tape records in topological order") {
  std::mt19937_64 rng(3);
  Tensor a = Tensor::randn({4, 4}, rng);
  Tensor b = Tensor::randn({4, 4}, rng);
  a.set_requires_grad(true);
  GradientTape tape;
  const Tensor loss = mean(mul(softmax(matmul(a, b), -1), b));
  CHECK(tape.op_count() > 0);
  CHECK(tape.topologically_ordered());
  tape.backward(loss);
}

TEST_CASE("suffix broadcasting and rejection") {
  const Tensor m = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor v = Tensor::from_values({3}, {10, 20, 30});
  const Tensor r = add(m, v);
  CHECK(r.at(0, 0) == 11);
  CHECK(r.at(1, 2) == 36);
  const Tensor bad = Tensor::from_values({2}, {1, 2});
  CHECK_THROWS_AS(add(m, bad), ShapeMismatchError);
}

TEST_CASE("broadcast gradient reduces over leading dims") {
  Tensor m = Tensor::ones({4, 3});
  Tensor v
      = Tensor::zeros({3});
  v.set_requires_grad(true);
  GradientTape tape;
  tape.backward(sum(add(m, v)));
  for (double g : v.grad()) CHECK(g == doctest::Approx(4.0));
}

TEST_CASE("finite checks trip on NaN-producing ops") {
  const Tensor x = Tensor::from_values({1}, {-1.0});
  CHECK_THROWS_AS(log(x), NumericError);
  set_finite_checks(false);
  CHECK_NOTHROW(log(x));
  set_finite_checks(true);
}

TEST_CASE("elementwise gradients match finite differences") {
  std::mt19937_64 rng(23);
  Tensor x = Tensor::randn({3, 4}, rng, 0.7);
  x.set_requires_grad(true);
  auto build = [&] {
    return sum(mul(tanh(x), add(sigmoid(x), exp(mul_scalar(x, 0.3)))));
  };
  {
    GradientTape tape;
    tape.backward(build());
  }
  CHECK(oracles::max_grad_rel_error([&] { return build().item(); }, {x}) <
        1e-4);
}

TEST_CASE("structural op gradients (transpose, slice, concat, reshape)") {
  std::mt19937_64 rng(29);
  Tensor a = Tensor::randn({3, 4}, rng);
  Tensor b = Tensor::randn({3, 2}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor w = Tensor::randn({6, 1}, rng);
  auto build = [&] {
    const Tensor joined = concat_cols({slice_cols(a, 1, 2), b});  // 3 x 4
    const Tensor flipped = transpose(joined);                     // 4 x 3
    const Tensor rows = concat_rows({flipped, flipped});          // 8 x 3
    return sum(matmul(reshape(rows, {4, 6}), w));
  };
  {
    GradientTape tape;
    tape.backward(build());
  }
  CHECK(oracles::max_grad_rel_error([&] { return build().item(); }, {a, b}) <
        1e-5);
}

TEST_CASE("randn is deterministic under a fixed seed") {
  std::mt19937_64 rng1(99), rng2(99);
  const Tensor a = Tensor::randn({5, 5}, rng1);
  const Tensor b = Tensor::randn({5, 5}, rng2);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(a.values()[i] == b.values()[i]);
  }
}

TEST_CASE("dropout is identity when inactive") {
  std::mt19937_64 rng(5);
  const Tensor x = Tensor::randn({4, 4}, rng);
  const Tensor eval_out = dropout(x, 0.5, false, nullptr);
  CHECK(eval_out.node() == x.node());
  const Tensor p0 = dropout(x, 0.0, true, &rng);
  CHECK(p0.node() == x.node());
}

TEST_CASE("inverted dropout preserves the mean and scales survivors") {
  std::mt19937_64 rng(31);
  const Tensor x = Tensor::ones({20000});
  const Tensor y = dropout(x, 0.4, true, &rng);
  double mean_v = 0.0;
  for (double v : y.values()) {
    if (v != 0.0) CHECK(v == doctest::Approx(1.0 / 0.6));
    mean_v += v;
  }
  mean_v /= static_cast<double>(y.numel());
  CHECK(mean_v == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("alpha dropout keeps standardized moments") {
  std::mt19937_64 rng(37);
  const Tensor x = Tensor::randn({100000}, rng);
  const Tensor y = alpha_dropout(x, 0.25, true, &rng);
  double mean_v = 0.0;
  for (double v : y.values()) mean_v += v;
  mean_v /= static_cast<double>(y.numel());
  double var = 0.0;
  for (double v : y.values()) var += (v - mean_v) * (v - mean_v);
  var /= static_cast<double>(y.numel());
  CHECK(std::abs(mean_v) < 0.02);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1, 2, 3}), ShapeMismatchError);
  const Tensor s = Tensor::scalar(4.0);
  CHECK(s.item() == 4.0);
  CHECK_THROWS_AS(Tensor::zeros({2, 2}).item(), ShapeMismatchError);
}
