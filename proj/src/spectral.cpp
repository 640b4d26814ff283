#include "mmlego/spectral.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace mmlego {

namespace {
std::atomic<std::uint64_t> g_imag_residual_warnings{0};
constexpr double kPi = std::numbers::pi;
}  // namespace

void ComplexLatent::validate() const {
  if (!real.defined() || !imag.defined() || real.rank() != 2 ||
      imag.rank() != 2 || real.shape() != imag.shape()) {
    throw ShapeMismatchError(
        "ComplexLatent: real and imag must be rank-2 tensors of equal shape");
  }
}

namespace fft {

namespace {

using cd = std::complex<double>;

// Twiddle tables are cached per (n, direction); the engine is used from a
// single thread per training run, so thread_local avoids locking.
const std::vector<cd>& twiddle_table(std::size_t n, bool inverse) {
  thread_local std::unordered_map<std::uint64_t, std::vector<cd>> cache;
  const std::uint64_t key = (static_cast<std::uint64_t>(n) << 1) |
                            (inverse ? 1u : 0u);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<cd> tw(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double ang = sign * 2.0 * kPi * static_cast<double>(j) /
                       static_cast<double>(n);
    tw[j] = cd(std::cos(ang), std::sin(ang));
  }
  return cache.emplace(key, std::move(tw)).first->second;
}

std::size_t smallest_prime_factor(std::size_t n) {
  if (n % 2 == 0) return 2;
  for (std::size_t f = 3; f * f <= n; f += 2) {
    if (n % f == 0) return f;
  }
  return n;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void bluestein(const cd* in, std::size_t stride, cd* out, std::size_t n,
               bool inverse);

// Mixed-radix Cooley-Tukey, decimation in time. Reads the strided input,
// writes a contiguous transform into `out`. `tw` is the top-level table of
// size N = n * tw_stride.
void fft_rec(const cd* in, std::size_t stride, cd* out, std::size_t n,
             const std::vector<cd>& tw, std::size_t tw_stride, bool inverse) {
  if (n == 1) {
    out[0] = in[0];
    return;
  }
  const std::size_t p = smallest_prime_factor(n);
  if (p > 31) {
    bluestein(in, stride, out, n, inverse);
    return;
  }
  const std::size_t m = n / p;
  for (std::size_t q = 0; q < p; ++q) {
    fft_rec(in + q * stride, stride * p, out + q * m, m, tw, tw_stride * p,
            inverse);
  }
  // Combine: X[k + r*m] = sum_q (w_n^{kq} Y_q[k]) w_p^{qr}. For a fixed k
  // the read and write slots coincide, so the update is in place per k.
  cd t[31];
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t q = 0; q < p; ++q) {
      t[q] = out[q * m + k] * tw[((k * q) % n) * tw_stride];
    }
    for (std::size_t r = 0; r < p; ++r) {
      cd acc(0.0, 0.0);
      for (std::size_t q = 0; q < p; ++q) {
        acc += t[q] * tw[((q * r) % p) * m * tw_stride];
      }
      out[k + r * m] = acc;
    }
  }
}

void transform_pow2(cd* data, std::size_t n, bool inverse) {
  thread_local std::vector<cd> scratch;
  scratch.assign(data, data + n);
  fft_rec(scratch.data(), 1, data, n, twiddle_table(n, inverse), 1, inverse);
}

// Chirp-z trick: any-length DFT as a circular convolution of power-of-two
// length >= 2n-1.
void bluestein(const cd* in, std::size_t stride, cd* out, std::size_t n,
               bool inverse) {
  const std::size_t m = next_pow2(2 * n - 1);
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cd> chirp(n);
  for (std::size_t j = 0; j < n; ++j) {
    // j^2 mod 2n keeps the angle argument small for accuracy.
    const std::uint64_t jj =
        (static_cast<std::uint64_t>(j) * j) % (2 * static_cast<std::uint64_t>(n));
    const double ang = sign * kPi * static_cast<double>(jj) /
                       static_cast<double>(n);
    chirp[j] = cd(std::cos(ang), std::sin(ang));
  }
  std::vector<cd> a(m, cd(0.0, 0.0));
  std::vector<cd> b(m, cd(0.0, 0.0));
  for (std::size_t j = 0; j < n; ++j) a[j] = in[j * stride] * chirp[j];
  for (std::size_t j = 0; j < n; ++j) {
    const cd c = std::conj(chirp[j]);
    b[j] = c;
    if (j != 0) b[m - j] = c;
  }
  transform_pow2(a.data(), m, false);
  transform_pow2(b.data(), m, false);
  for (std::size_t j = 0; j < m; ++j) a[j] *= b[j];
  transform_pow2(a.data(), m, true);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * inv_m * chirp[k];
}

}  // namespace

void transform(cd* data, std::size_t n, bool inverse) {
  if (n == 0) throw ShapeMismatchError("fft: empty transform");
  if (n == 1) return;
  thread_local std::vector<cd> scratch;
  scratch.assign(data, data + n);
  fft_rec(scratch.data(), 1, data, n, twiddle_table(n, inverse), 1, inverse);
}

}  // namespace fft

namespace {

// Unitary 2-D transform on raw buffers. `im_in` may be null (real input);
// `im_out` may be null when only the real part is needed. Returns the
// max-abs of the discarded imaginary part in that case.
double dft2_raw(const double* re_in, const double* im_in, std::size_t c,
                std::size_t d, bool inverse, double* re_out, double* im_out) {
  std::vector<std::complex<double>> buf(c * d);
  for (std::size_t i = 0; i < c * d; ++i) {
    buf[i] = std::complex<double>(re_in[i], im_in ? im_in[i] : 0.0);
  }
  for (std::size_t r = 0; r < c; ++r) {
    fft::transform(buf.data() + r * d, d, inverse);
  }
  std::vector<std::complex<double>> col(c);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t r = 0; r < c; ++r) col[r] = buf[r * d + j];
    fft::transform(col.data(), c, inverse);
    for (std::size_t r = 0; r < c; ++r) buf[r * d + j] = col[r];
  }
  const double scale =
      1.0 / std::sqrt(static_cast<double>(c) * static_cast<double>(d));
  double residual = 0.0;
  for (std::size_t i = 0; i < c * d; ++i) {
    re_out[i] = buf[i].real() * scale;
    if (im_out != nullptr) {
      im_out[i] = buf[i].imag() * scale;
    } else {
      residual = std::max(residual, std::abs(buf[i].imag() * scale));
    }
  }
  return residual;
}

void require_matrix(const Tensor& x, const char* op) {
  if (!x.defined() || x.rank() != 2 || x.shape()[0] == 0 || x.shape()[1] == 0) {
    throw ShapeMismatchError(std::string(op) + ": expects a non-empty matrix");
  }
}

}  // namespace

ComplexLatent dft2(const Tensor& x) {
  require_matrix(x, "dft2");
  const std::size_t c = x.shape()[0], d = x.shape()[1];
  std::vector<double> re(c * d), im(c * d);
  dft2_raw(x.values().data(), nullptr, c, d, false, re.data(), im.data());
  return ComplexLatent{Tensor::from_values({c, d}, std::move(re)),
                       Tensor::from_values({c, d}, std::move(im))};
}

Tensor inverse_dft2(const ComplexLatent& z) {
  z.validate();
  const std::size_t c = z.channels(), d = z.dims();
  std::vector<double> re(c * d);
  const double residual =
      dft2_raw(z.real.values().data(), z.imag.values().data(), c, d, true,
               re.data(), nullptr);
  if (residual > 1e-8) {
    g_imag_residual_warnings.fetch_add(1, std::memory_order_relaxed);
  }
  return Tensor::from_values({c, d}, std::move(re));
}

std::uint64_t imag_residual_warnings() {
  return g_imag_residual_warnings.load(std::memory_order_relaxed);
}

std::pair<Tensor, Tensor> dft2_parts(const Tensor& x) {
  require_matrix(x, "dft2_parts");
  const std::size_t c = x.shape()[0], d = x.shape()[1];
  std::vector<double> re(c * d), im(c * d);
  dft2_raw(x.values().data(), nullptr, c, d, false, re.data(), im.data());
  Tensor re_t = Tensor::from_values({c, d}, std::move(re));
  Tensor im_t = Tensor::from_values({c, d}, std::move(im));
  GradientTape* tape = GradientTape::active();
  if (tape != nullptr && x.requires_grad()) {
    re_t.set_requires_grad(true);
    im_t.set_requires_grad(true);
    auto xn = x.node();
    auto rn = re_t.node();
    auto in_ = im_t.node();
    tape->record({x}, {re_t, im_t}, [xn, rn, in_, c, d]() {
      if (!xn->requires_grad) return;
      if (rn->grad.empty() && in_->grad.empty()) return;
      std::vector<double> zeros;
      const double* gre = rn->grad.data();
      const double* gim = in_->grad.data();
      if (rn->grad.empty() || in_->grad.empty()) {
        zeros.assign(c * d, 0.0);
        if (rn->grad.empty()) gre = zeros.data();
        if (in_->grad.empty()) gim = zeros.data();
      }
      // The transform is linear; the adjoint of the unitary forward map is
      // the real part of the unitary inverse applied to the output grads.
      std::vector<double> gx(c * d);
      dft2_raw(gre, gim, c, d, true, gx.data(), nullptr);
      xn->materialize_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) xn->grad[i] += gx[i];
    });
  }
  return {re_t, im_t};
}

Tensor idft2_real(const Tensor& real, const Tensor& imag) {
  require_matrix(real, "idft2_real");
  require_matrix(imag, "idft2_real");
  if (real.shape() != imag.shape()) {
    throw ShapeMismatchError("idft2_real: real/imag shapes disagree");
  }
  const std::size_t c = real.shape()[0], d = real.shape()[1];
  std::vector<double> out(c * d);
  const double residual = dft2_raw(real.values().data(), imag.values().data(),
                                   c, d, true, out.data(), nullptr);
  if (residual > 1e-8) {
    g_imag_residual_warnings.fetch_add(1, std::memory_order_relaxed);
  }
  Tensor y = Tensor::from_values({c, d}, std::move(out));
  GradientTape* tape = GradientTape::active();
  if (tape != nullptr && (real.requires_grad() || imag.requires_grad())) {
    y.set_requires_grad(true);
    auto rn = real.node();
    auto in_ = imag.node();
    auto yn = y.node();
    tape->record({real, imag}, {y}, [rn, in_, yn, c, d]() {
      if (yn->grad.empty()) return;
      // Adjoint of "real part of unitary inverse" is the unitary forward
      // transform of the grad; its real part feeds d/d(real), its imaginary
      // part feeds d/d(imag).
      std::vector<double> gre(c * d), gim(c * d);
      dft2_raw(yn->grad.data(), nullptr, c, d, false, gre.data(), gim.data());
      if (rn->requires_grad) {
        rn->materialize_grad();
        for (std::size_t i = 0; i < gre.size(); ++i) rn->grad[i] += gre[i];
      }
      if (in_->requires_grad) {
        in_->materialize_grad();
        for (std::size_t i = 0; i < gim.size(); ++i) in_->grad[i] += gim[i];
      }
    });
  }
  return y;
}

Tensor dft_real_component(const Tensor& h) { return dft2_parts(h).first; }

PhaseMode phase_mode_from_string(const std::string& s) {
  if (s == "literal") return PhaseMode::kLiteral;
  if (s == "circular") return PhaseMode::kCircular;
  throw ConfigError("unknown phase mode '" + s + "'");
}

std::string to_string(PhaseMode mode) {
  return mode == PhaseMode::kLiteral ? "literal" : "circular";
}

ComplexLatent merge_latents(const std::vector<ComplexLatent>& latents,
                            PhaseMode mode) {
  if (latents.size() < 2) {
    throw EmptyInputError("merge_latents: need at least two latents");
  }
  for (const ComplexLatent& z : latents) z.validate();
  const Shape shape = latents[0].real.shape();
  for (const ComplexLatent& z : latents) {
    if (z.real.shape() != shape) {
      throw ShapeMismatchError("merge_latents: latent shapes disagree");
    }
  }
  const std::size_t n = shape[0] * shape[1];
  const double count = static_cast<double>(latents.size());
  std::vector<double> out_re(n), out_im(n);
  for (std::size_t i = 0; i < n; ++i) {
    double inv_sum = 0.0;
    bool zero_bin = false;
    double phase_sum = 0.0, sin_sum = 0.0, cos_sum = 0.0;
    for (const ComplexLatent& z : latents) {
      const double re = z.real.values()[i];
      const double im = z.imag.values()[i];
      const double mag = std::hypot(re, im);
      if (mag < 1e-15) {
        zero_bin = true;  // harmonic mean limit
      } else {
        inv_sum += 1.0 / mag;
      }
      const double ph = std::atan2(im, re);
      phase_sum += ph;
      sin_sum += std::sin(ph);
      cos_sum += std::cos(ph);
    }
    const double mag = zero_bin ? 0.0 : count / inv_sum;
    double phase = 0.0;
    if (mode == PhaseMode::kLiteral) {
      phase = phase_sum / count;
    } else if (std::hypot(sin_sum, cos_sum) > 1e-15) {
      phase = std::atan2(sin_sum, cos_sum);
    }
    out_re[i] = mag * std::cos(phase);
    out_im[i] = mag * std::sin(phase);
  }
  return ComplexLatent{Tensor::from_values(shape, std::move(out_re)),
                       Tensor::from_values(shape, std::move(out_im))};
}

ParsevalReport parseval_check(const Tensor& x, const Tensor& y) {
  require_matrix(x, "parseval_check");
  if (x.shape() != y.shape()) {
    throw ShapeMismatchError("parseval_check: shapes disagree");
  }
  ParsevalReport report;
  double spatial = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = x.values()[i] - y.values()[i];
    spatial += d * d;
  }
  const ComplexLatent zx = dft2(x);
  const ComplexLatent zy = dft2(y);
  double spectral = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double dr = zx.real.values()[i] - zy.real.values()[i];
    const double di = zx.imag.values()[i] - zy.imag.values()[i];
    spectral += dr * dr + di * di;
  }
  report.spatial_distance = std::sqrt(spatial);
  report.spectral_distance = std::sqrt(spectral);
  report.discrepancy =
      std::abs(report.spatial_distance - report.spectral_distance);
  report.passed = report.discrepancy < 1e-9;
  return report;
}

namespace {

double ac_energy(const std::vector<double>& x) {
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double e = 0.0;
  for (double v : x) e += (v - mu) * (v - mu);
  return e;
}

// AC energy of a merged spectrum: total magnitude energy minus the DC bin,
// which equals the spatial mean-removed energy by Parseval.
double spectral_ac_energy(const ComplexLatent& z) {
  double e = 0.0;
  const auto re = z.real.values();
  const auto im = z.imag.values();
  for (std::size_t i = 0; i < re.size(); ++i)
    e += re[i] * re[i] + im[i] * im[i];
  e -= re[0] * re[0] + im[0] * im[0];
  return e;
}

struct ScenarioSignals {
  std::vector<double> a;
  std::vector<double> b;
};

ScenarioSignals make_inverse_noise(std::mt19937_64& rng, std::size_t n,
                                   double noise_sigma) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  ScenarioSignals s;
  s.a.resize(n);
  s.b.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    s.a[t] = unit(rng);
    s.b[t] = -s.a[t] + noise(rng);
  }
  return s;
}

// Two square carriers at slightly offset non-integer frequencies, each with
// an amplitude envelope drawn from a normal distribution per half-period.
// The offset drifts the relative phase across the window, which is what
// spatial averaging is sensitive to, while the magnitude spectra stay close.
ScenarioSignals make_squarewave_offset(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> amp(1.0, 0.35);
  const double f1 = 3.7;
  const double f2 = f1 + 0.5;
  auto build = [&](double freq) {
    std::vector<double> x(n);
    const double half_period = static_cast<double>(n) / (2.0 * freq);
    double a = amp(rng);
    int segment = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const int seg = static_cast<int>(static_cast<double>(t) / half_period);
      if (seg != segment) {
        segment = seg;
        a = amp(rng);
      }
      const double carrier =
          std::sin(2.0 * kPi * freq * static_cast<double>(t) /
                   static_cast<double>(n)) >= 0.0
              ? 1.0
              : -1.0;
      x[t] = a * carrier;
    }
    return x;
  };
  ScenarioSignals s;
  s.a = build(f1);
  s.b = build(f2);
  return s;
}

}  // namespace

InterferenceReport interference_experiment(InterferenceKind kind,
                                           std::size_t n_seeds,
                                           std::uint64_t base_seed,
                                           double noise_sigma) {
  constexpr std::size_t kLength = 128;
  InterferenceReport report;
  report.n_seeds = n_seeds;
  const std::string scenario = kind == InterferenceKind::kInverseNoise
                                   ? "inverse_noise"
                                   : "squarewave_offset";
  for (std::size_t s = 0; s < n_seeds; ++s) {
    std::mt19937_64 rng(base_seed + s);
    ScenarioSignals sig = kind == InterferenceKind::kInverseNoise
                              ? make_inverse_noise(rng, kLength, noise_sigma)
                              : make_squarewave_offset(rng, kLength);
    const double input_energy =
        0.5 * (ac_energy(sig.a) + ac_energy(sig.b));

    std::vector<double> mean_sig(kLength), abs_sig(kLength);
    for (std::size_t t = 0; t < kLength; ++t) {
      mean_sig[t] = 0.5 * (sig.a[t] + sig.b[t]);
      abs_sig[t] = 0.5 * (std::abs(sig.a[t]) + std::abs(sig.b[t]));
    }
    const Tensor ta = Tensor::from_values({1, kLength}, sig.a);
    const Tensor tb = Tensor::from_values({1, kLength}, sig.b);
    const ComplexLatent merged =
        merge_latents({dft2(ta), dft2(tb)}, PhaseMode::kLiteral);

    const double r_mean = ac_energy(mean_sig) / input_energy;
    const double r_abs = ac_energy(abs_sig) / input_energy;
    const double r_freq = spectral_ac_energy(merged) / input_energy;

    const std::uint64_t seed = base_seed + s;
    report.rows.push_back({scenario, seed, "spatial_mean", r_mean});
    report.rows.push_back({scenario, seed, "spatial_abs_mean", r_abs});
    report.rows.push_back({scenario, seed, "freq_harmonic", r_freq});
    report.mean_spatial += r_mean;
    report.mean_spatial_abs += r_abs;
    report.mean_frequency += r_freq;
    if (r_freq > r_mean && r_freq > r_abs) ++report.frequency_wins;
  }
  if (n_seeds > 0) {
    report.mean_spatial /= static_cast<double>(n_seeds);
    report.mean_spatial_abs /= static_cast<double>(n_seeds);
    report.mean_frequency /= static_cast<double>(n_seeds);
  }
  return report;
}

std::string interference_csv(const InterferenceReport& report) {
  std::ostringstream os;
  os << "scenario,seed,aggregator,retained_energy_ratio\n";
  for (const InterferenceRow& row : report.rows) {
    os << row.scenario << ',' << row.seed << ',' << row.aggregator << ','
       << row.retained_energy_ratio << '\n';
  }
  return os.str();
}

}  // namespace mmlego
