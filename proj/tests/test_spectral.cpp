#include <doctest.h>

#include <cmath>
#include <random>

#include "mmlego/spectral.hpp"
#include "oracles.hpp"

using namespace mmlego;

namespace {

Tensor random_matrix(std::size_t c, std::size_t d, std::uint64_t seed,
                     double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor::randn({c, d}, rng, scale);
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("dft2 of the all-ones 2x2 is a pure DC bin") {
  const ComplexLatent z = dft2(Tensor::ones({2, 2}));
  CHECK(z.real.values()[0] == doctest::Approx(2.0));
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK(std::abs(z.real.values()[i]) < 1e-12);
  }
  for (double v : z.imag.values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("dft2 of an impulse is flat") {
  Tensor x = Tensor::zeros({4, 4});
  x.mutable_values()[0] = 1.0;
  const ComplexLatent z = dft2(x);
  for (double v : z.real.values()) CHECK(v == doctest::Approx(0.25));
  for (double v : z.imag.values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("dft2 matches the naive oracle on assorted sizes") {
  // 17 exercises the direct radix-17 combine, 126 the smooth mixed-radix
  // path, 37 and 127 the Bluestein fallback.
  const std::vector<std::pair<std::size_t, std::size_t>> sizes = {
      {2, 2}, {4, 4}, {8, 16}, {17, 126}, {5, 37}, {127, 3}};
  for (auto [c, d] : sizes) {
    const Tensor x = random_matrix(c, d, 1000 + c * 131 + d);
    const ComplexLatent z = dft2(x);
    const auto ref = oracles::naive_dft2(
        {x.values().begin(), x.values().end()}, {}, c, d, false);
    CHECK(max_abs_diff(z.real.values(), ref.re) < 1e-9);
    CHECK(max_abs_diff(z.imag.values(), ref.im) < 1e-9);
  }
}

TEST_CASE("inverse_dft2 matches the naive inverse oracle") {
  const std::size_t c = 9, d = 14;
  const Tensor re = random_matrix(c, d, 21);
  const Tensor im = random_matrix(c, d, 22);
  const ComplexLatent z{re, im};
  const Tensor y = inverse_dft2(z);
  const auto ref = oracles::naive_dft2({re.values().begin(), re.values().end()},
                                       {im.values().begin(), im.values().end()},
                                       c, d, true);
  CHECK(max_abs_diff(y.values(), ref.re) < 1e-9);
}

TEST_CASE("round trip reconstructs the input") {
  const Tensor x = random_matrix(17, 126, 7);
  const Tensor y = inverse_dft2(dft2(x));
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    worst = std::max(worst, std::abs(x.values()[i] - y.values()[i]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("inverse of a DC-only spectrum is constant") {
  Tensor re = Tensor::zeros({2, 2});
  re.mutable_values()[0] = 2.0;
  const Tensor y = inverse_dft2({re, Tensor::zeros({2, 2})});
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("unitarity: energy is preserved") {
  const Tensor x = random_matrix(8, 16, 31);
  const ComplexLatent z = dft2(x);
  double spatial = 0.0, spectral = 0.0;
  for (double v : x.values()) spatial += v * v;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    spectral += z.real.values()[i] * z.real.values()[i] +
                z.imag.values()[i] * z.imag.values()[i];
  }
  CHECK(std::abs(spatial - spectral) / spatial < 1e-9);
}

TEST_CASE("linearity of the transform") {
  const std::size_t c = 6, d = 10;
  const Tensor x = random_matrix(c, d, 41);
  const Tensor y = random_matrix(c, d, 42);
  const double a = 1.7, b = -0.6;
  std::vector<double> combo(c * d);
  for (std::size_t i = 0; i < combo.size(); ++i) {
    combo[i] = a * x.values()[i] + b * y.values()[i];
  }
  const ComplexLatent zc = dft2(Tensor::from_values({c, d}, combo));
  const ComplexLatent zx = dft2(x);
  const ComplexLatent zy = dft2(y);
  for (std::size_t i = 0; i < combo.size(); ++i) {
    CHECK(std::abs(zc.real.values()[i] -
                   (a * zx.real.values()[i] + b * zy.real.values()[i])) <
          1e-10);
    CHECK(std::abs(zc.imag.values()[i] -
                   (a * zx.imag.values()[i] + b * zy.imag.values()[i])) <
          1e-10);
  }
}

TEST_CASE("basis phasors are pairwise orthogonal") {
  // Explicit construction for small grids: the (u,v) basis phasor is the
  // inverse transform of a one-hot spectrum, and distinct phasors must have
  // zero complex inner product.
  for (std::size_t c : {2, 3}) {
    for (std::size_t d : {4, 8}) {
      std::vector<std::vector<std::complex<double>>> basis;
      for (std::size_t u = 0; u < c; ++u) {
        for (std::size_t v = 0; v < d; ++v) {
          std::vector<double> re(c * d, 0.0), im(c * d, 0.0);
          re[u * d + v] = 1.0;
          const auto spatial = oracles::naive_dft2(re, im, c, d, true);
          std::vector<std::complex<double>> phasor(c * d);
          for (std::size_t i = 0; i < c * d; ++i) {
            phasor[i] = {spatial.re[i], spatial.im[i]};
          }
          basis.push_back(std::move(phasor));
        }
      }
      for (std::size_t a = 0; a < basis.size(); ++a) {
        for (std::size_t b = a + 1; b < basis.size(); ++b) {
          std::complex<double> dot(0.0, 0.0);
          for (std::size_t i = 0; i < c * d; ++i) {
            dot += basis[a][i] * std::conj(basis[b][i]);
          }
          CHECK(std::abs(dot) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("parseval distance check") {
  const Tensor x = random_matrix(17, 126, 51);
  const Tensor y = random_matrix(17, 126, 52);
  const ParsevalReport r = parseval_check(x, y);
  CHECK(r.passed);
  CHECK(r.discrepancy < 1e-9);

  const ParsevalReport same = parseval_check(x, x);
  CHECK(same.spatial_distance == 0.0);
  CHECK(same.spectral_distance < 1e-12);

  // Unit impulse vs zero: both distances are exactly one under the unitary
  // convention.
  Tensor impulse = Tensor::zeros({1, 4});
  impulse.mutable_values()[0] = 1.0;
  const ParsevalReport unit = parseval_check(impulse, Tensor::zeros({1, 4}));
  CHECK(unit.spatial_distance == doctest::Approx(1.0));
  CHECK(unit.spectral_distance == doctest::Approx(1.0));
}

TEST_CASE("dft2_parts gradients are the adjoint transform") {
  std::mt19937_64 rng(61);
  Tensor x = Tensor::randn({3, 5}, rng);
  x.set_requires_grad(true);
  Tensor wr = Tensor::randn({3, 5}, rng);
  Tensor wi = Tensor::randn({3, 5}, rng);
  auto build = [&] {
    auto [re, im] = dft2_parts(x);
    return add(sum(mul(re, wr)), sum(mul(im, wi)));
  };
  {
    GradientTape tape;
    tape.backward(build());
  }
  CHECK(oracles::max_grad_rel_error([&] { return build().item(); }, {x}) <
        1e-6);
}

TEST_CASE("idft2_real gradients are the forward transform") {
  std::mt19937_64 rng(67);
  Tensor re = Tensor::randn({4, 6}, rng);
  Tensor im = Tensor::randn({4, 6}, rng);
  re.set_requires_grad(true);
  im.set_requires_grad(true);
  Tensor w = Tensor::randn({4, 6}, rng);
  auto build = [&] { return sum(mul(idft2_real(re, im), w)); };
  {
    GradientTape tape;
    tape.backward(build());
  }
  CHECK(oracles::max_grad_rel_error([&] { return build().item(); }, {re, im}) <
        1e-6);
}

TEST_CASE("imaginary residual warnings are counted") {
  const std::uint64_t before = imag_residual_warnings();
  Tensor im = Tensor::zeros({4, 4});
  im.mutable_values()[5] = 1.0;  // not conjugate-symmetric
  (void)inverse_dft2({Tensor::zeros({4, 4}), im});
  CHECK(imag_residual_warnings() > before);
}

TEST_CASE("merge of a latent with itself is the latent") {
  const std::size_t c = 5, d = 9;
  const ComplexLatent z{random_matrix(c, d, 71), random_matrix(c, d, 72)};
  for (PhaseMode mode : {PhaseMode::kLiteral, PhaseMode::kCircular}) {
    const ComplexLatent merged = merge_latents({z, z}, mode);
    for (std::size_t i = 0; i < c * d; ++i) {
      CHECK(std::abs(merged.real.values()[i] - z.real.values()[i]) < 1e-12);
      CHECK(std::abs(merged.imag.values()[i] - z.imag.values()[i]) < 1e-12);
    }
  }
}

TEST_CASE("harmonic mean of magnitudes 3 and 6 is 4") {
  const ComplexLatent a{Tensor::from_values({1, 1}, {3.0}),
                        Tensor::zeros({1, 1})};
  const ComplexLatent b{Tensor::from_values({1, 1}, {6.0}),
                        Tensor::zeros({1, 1})};
  const ComplexLatent merged = merge_latents({a, b});
  CHECK(merged.real.values()[0] == doctest::Approx(4.0));
  CHECK(std::abs(merged.imag.values()[0]) < 1e-12);
}

TEST_CASE("merge matches a per-bin scalar oracle") {
  const std::size_t c = 4, d = 7;
  const ComplexLatent a{random_matrix(c, d, 81), random_matrix(c, d, 82)};
  const ComplexLatent b{random_matrix(c, d, 83), random_matrix(c, d, 84)};
  const ComplexLatent merged = merge_latents({a, b}, PhaseMode::kLiteral);
  for (std::size_t i = 0; i < c * d; ++i) {
    const double ma = std::hypot(a.real.values()[i], a.imag.values()[i]);
    const double mb = std::hypot(b.real.values()[i], b.imag.values()[i]);
    const double mag = 2.0 * ma * mb / (ma + mb);
    const double ph = (std::atan2(a.imag.values()[i], a.real.values()[i]) +
                       std::atan2(b.imag.values()[i], b.real.values()[i])) /
                      2.0;
    CHECK(std::abs(merged.real.values()[i] - mag * std::cos(ph)) < 1e-12);
    CHECK(std::abs(merged.imag.values()[i] - mag * std::sin(ph)) < 1e-12);
  }
}

TEST_CASE("merge zero-magnitude bins collapse to zero") {
  const ComplexLatent a{Tensor::zeros({1, 2}), Tensor::zeros({1, 2})};
  const ComplexLatent b{Tensor::ones({1, 2}), Tensor::zeros({1, 2})};
  const ComplexLatent merged = merge_latents({a, b});
  for (double v : merged.real.values()) CHECK(v == 0.0);
}

TEST_CASE("merge is permutation invariant") {
  const std::size_t c = 3, d = 5;
  const ComplexLatent a{random_matrix(c, d, 91), random_matrix(c, d, 92)};
  const ComplexLatent b{random_matrix(c, d, 93), random_matrix(c, d, 94)};
  const ComplexLatent x{random_matrix(c, d, 95), random_matrix(c, d, 96)};
  const ComplexLatent m1 = merge_latents({a, b, x});
  const ComplexLatent m2 = merge_latents({x, a, b});
  for (std::size_t i = 0; i < c * d; ++i) {
    CHECK(std::abs(m1.real.values()[i] - m2.real.values()[i]) < 1e-12);
    CHECK(std::abs(m1.imag.values()[i] - m2.imag.values()[i]) < 1e-12);
  }
}

TEST_CASE("merge input validation") {
  const ComplexLatent a{Tensor::ones({2, 2}), Tensor::zeros({2, 2})};
  const ComplexLatent b{Tensor::ones({2, 3}), Tensor::zeros({2, 3})};
  CHECK_THROWS_AS(merge_latents({a}), EmptyInputError);
  CHECK_THROWS_AS(merge_latents({a, b}), ShapeMismatchError);
}

TEST_CASE("inverse-noise interference: spatial mean cancels, spectrum survives") {
  const InterferenceReport r =
      interference_experiment(InterferenceKind::kInverseNoise, 100, 1, 0.1);
  std::size_t spatial_ok = 0, freq_ok = 0;
  for (const InterferenceRow& row : r.rows) {
    if (row.aggregator == "spatial_mean" && row.retained_energy_ratio < 0.05) {
      ++spatial_ok;
    }
    if (row.aggregator == "freq_harmonic" && row.retained_energy_ratio > 0.5) {
      ++freq_ok;
    }
  }
  CHECK(spatial_ok == 100);
  CHECK(freq_ok == 100);
}

TEST_CASE("exact inverse with zero noise cancels completely") {
  const InterferenceReport r =
      interference_experiment(InterferenceKind::kInverseNoise, 3, 9, 0.0);
  for (const InterferenceRow& row : r.rows) {
    if (row.aggregator == "spatial_mean") {
      CHECK(row.retained_energy_ratio < 1e-20);
    }
  }
}

TEST_CASE("square-wave offset: frequency aggregation wins") {
  const InterferenceReport r =
      interference_experiment(InterferenceKind::kSquarewaveOffset, 100, 1);
  CHECK(r.frequency_wins >= 95);
}

TEST_CASE("interference CSV is plot-ready") {
  const InterferenceReport r =
      interference_experiment(InterferenceKind::kInverseNoise, 2, 5, 0.1);
  const std::string csv = interference_csv(r);
  CHECK(csv.rfind("scenario,seed,aggregator,retained_energy_ratio\n", 0) == 0);
  CHECK(csv.find("inverse_noise,5,spatial_mean,") != std::string::npos);
  CHECK(csv.find("freq_harmonic") != std::string::npos);
}
