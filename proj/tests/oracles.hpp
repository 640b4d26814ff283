#pragma once

// Test-only reference implementations, kept deliberately independent of the
// library's computation paths: quadratic-time DFT loops, coordinate-wise
// finite differences, long-double reductions, and explicit pair counting.

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "mmlego/tensor.hpp"

namespace oracles {

struct ComplexMatrix {
  std::vector<double> re;
  std::vector<double> im;
};

// Unitary 2-D DFT by direct double summation over all index pairs.
inline ComplexMatrix naive_dft2(const std::vector<double>& re_in,
                                const std::vector<double>& im_in,
                                std::size_t c, std::size_t d, bool inverse) {
  const double pi = 3.14159265358979323846;
  const double sign = inverse ? 1.0 : -1.0;
  ComplexMatrix out;
  out.re.assign(c * d, 0.0);
  out.im.assign(c * d, 0.0);
  for (std::size_t u = 0; u < c; ++u) {
    for (std::size_t v = 0; v < d; ++v) {
      std::complex<double> acc(0.0, 0.0);
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const double ang =
              sign * 2.0 * pi *
              (static_cast<double>(u * i) / static_cast<double>(c) +
               static_cast<double>(v * j) / static_cast<double>(d));
          const std::complex<double> w(std::cos(ang), std::sin(ang));
          const std::complex<double> x(re_in[i * d + j],
                                       im_in.empty() ? 0.0 : im_in[i * d + j]);
          acc += x * w;
        }
      }
      const double scale =
          1.0 / std::sqrt(static_cast<double>(c) * static_cast<double>(d));
      out.re[u * d + v] = acc.real() * scale;
      out.im[u * d + v] = acc.imag() * scale;
    }
  }
  return out;
}

// Softmax evaluated in extended precision with compensated summation.
inline std::vector<double> highprec_softmax(const std::vector<double>& x) {
  long double mx = x[0];
  for (double v : x) mx = std::max<long double>(mx, v);
  std::vector<long double> e(x.size());
  long double sum = 0.0L, comp = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(x[i]) - mx);
    const long double y = e[i] - comp;
    const long double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<double>(e[i] / sum);
  }
  return out;
}

// Central-difference gradient check. `forward` must recompute the loss from
// the parameters' current values; analytic gradients must already be
// populated on the parameters. Returns the worst relative error, where the
// relative scale is floored so near-zero gradients are compared absolutely.
inline double max_grad_rel_error(const std::function<double()>& forward,
                                 std::vector<mmlego::Tensor> params,
                                 double step = 1e-5) {
  double worst = 0.0;
  for (mmlego::Tensor& p : params) {
    if (!p.has_grad()) continue;
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = forward();
      values[i] = saved - step;
      const double down = forward();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p.grad()[i];
      const double denom =
          std::max({1e-3, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

// AUC by explicit pair counting (ties earn half).
inline double pair_count_auc(const std::vector<double>& scores,
                             const std::vector<bool>& labels) {
  double credit = 0.0, total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      total += 1.0;
      if (scores[i] > scores[j]) {
        credit += 1.0;
      } else if (scores[i] == scores[j]) {
        credit += 0.5;
      }
    }
  }
  return credit / total;
}

// Concordance by enumerating ordered pairs the other way around than the
// library (over all (i, j) with j the later event).
inline double pair_count_cindex(const std::vector<double>& risks,
                                const std::vector<double>& times,
                                const std::vector<bool>& censored) {
  double credit = 0.0, total = 0.0;
  const std::size_t n = risks.size();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      // i must be an observed event strictly earlier than j's time.
      if (censored[i] || !(times[i] < times[j])) continue;
      total += 1.0;
      if (risks[i] > risks[j]) {
        credit += 1.0;
      } else if (risks[i] == risks[j]) {
        credit += 0.5;
      }
    }
  }
  return credit / total;
}

}  // namespace oracles
