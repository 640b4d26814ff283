#pragma once

// 2-D discrete Fourier transforms with unitary normalization (1/sqrt(N) in
// both directions), the complex-latent bookkeeping used by the block update,
// and the frequency-domain aggregation operator. Arbitrary sizes are
// supported: mixed-radix Cooley-Tukey for prime factors <= 31 and a
// Bluestein fallback for larger primes.

#include <complex>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmlego/tensor.hpp"

namespace mmlego {

// Paired real/imaginary components of a frequency-domain latent state.
// Both are plain (non-recorded) rank-2 tensors of identical shape.
struct ComplexLatent {
  Tensor real;
  Tensor imag;

  std::size_t channels() const { return real.shape()[0]; }
  std::size_t dims() const { return real.shape()[1]; }
  void validate() const;
};

namespace fft {
// In-place 1-D transform of `n` complex values with stride 1; unscaled
// (no 1/n or 1/sqrt(n) factor in either direction).
void transform(std::complex<double>* data, std::size_t n, bool inverse);
}  // namespace fft

// Unitary 2-D DFT of a real matrix.
ComplexLatent dft2(const Tensor& x);
// Real part of the unitary inverse transform. The magnitude of any
// discarded imaginary residual above 1e-8 increments a process-wide warning
// counter (the transform of a tracked complex latent is not guaranteed to
// be conjugate-symmetric).
Tensor inverse_dft2(const ComplexLatent& z);
std::uint64_t imag_residual_warnings();

// Tape-aware variants used inside model forwards. The transforms are linear
// maps, so the backward rules are transforms themselves.
std::pair<Tensor, Tensor> dft2_parts(const Tensor& x);
Tensor idft2_real(const Tensor& real, const Tensor& imag);
// Real component of dft2(h); h is (tokens x features).
Tensor dft_real_component(const Tensor& h);

enum class PhaseMode {
  kLiteral,   // arithmetic mean of atan2 phases
  kCircular,  // angle of the summed unit phasors
};

PhaseMode phase_mode_from_string(const std::string& s);
std::string to_string(PhaseMode mode);

// Per-bin aggregation: merged magnitude is the n-ary harmonic mean of the
// input magnitudes (0 if any input bin is ~0), merged phase is the mean of
// phases under `mode`. Inputs must agree in shape and number >= 2.
ComplexLatent merge_latents(const std::vector<ComplexLatent>& latents,
                            PhaseMode mode = PhaseMode::kLiteral);

// |  ||x - y||_2  -  ||dft2(x) - dft2(y)||_2  |, which unitarity drives to
// zero. `passed` uses the 1e-9 threshold.
struct ParsevalReport {
  double spatial_distance = 0.0;
  double spectral_distance = 0.0;
  double discrepancy = 0.0;
  bool passed = false;
};
ParsevalReport parseval_check(const Tensor& x, const Tensor& y);

// Signal-interference scenarios. Retained energy is measured on the
// mean-removed (AC) component: a constant aggregate carries no signal.
enum class InterferenceKind { kInverseNoise, kSquarewaveOffset };

struct InterferenceRow {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string aggregator;  // spatial_mean | spatial_abs_mean | freq_harmonic
  double retained_energy_ratio = 0.0;
};

struct InterferenceReport {
  std::vector<InterferenceRow> rows;
  // Per-aggregator means over all seeds.
  double mean_spatial = 0.0;
  double mean_spatial_abs = 0.0;
  double mean_frequency = 0.0;
  // Seeds in which the frequency aggregator beat both spatial ones.
  std::size_t frequency_wins = 0;
  std::size_t n_seeds = 0;
};

InterferenceReport interference_experiment(InterferenceKind kind,
                                           std::size_t n_seeds = 100,
                                           std::uint64_t base_seed = 1,
                                           double noise_sigma = 0.1);

std::string interference_csv(const InterferenceReport& report);

}  // namespace mmlego
