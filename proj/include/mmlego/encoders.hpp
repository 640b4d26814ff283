#pragma once

// Modality-specific encoders behind one interface: a self-normalizing
// feed-forward network for tabular vectors, a gated attention-MIL pooler
// for bags of instances, and a pass-through for features that are already
// small. Every encoder emits a token matrix (n_tokens x feature_dim) so the
// block update can consume any of them as keys/values.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mmlego/tensor.hpp"

namespace mmlego {

enum class EncoderKind { kSnn, kAbmil, kIdentity };

EncoderKind encoder_kind_from_string(const std::string& s);
std::string to_string(EncoderKind kind);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kSnn;
  std::size_t input_dim = 0;
  // SNN stack; each entry is one (linear -> SELU -> alpha-dropout) layer.
  std::vector<std::size_t> hidden_dims = {256, 256, 256, 256};
  double dropout = 0.25;  // alpha-dropout rate for SNN layers
  // ABMIL dimensions.
  std::size_t abmil_embed_dim = 512;
  std::size_t abmil_attn_dim = 256;
  double abmil_attn_dropout = 0.25;
  // When set, the projected instances ride along as extra tokens after the
  // pooled one.
  bool abmil_instance_tokens = false;
  // Per-feature standardization of inputs, fitted on the training split.
  bool normalise = true;

  std::size_t output_feature_dim() const;
  void validate() const;
};

// One modality observation: a feature vector (rank-1) for tabular inputs or
// an instance matrix (rank-2, variable row count) for bags.
struct ModalitySample {
  Tensor features;
  bool is_bag = false;
};

// Feature-wise affine standardization (x - mean) / std with a floor on std.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool fitted() const { return !mean.empty(); }
  void fit(const std::vector<const ModalitySample*>& samples,
           std::size_t feature_dim);
  Tensor apply(const Tensor& x) const;
};

struct SnnParams {
  struct Layer {
    Tensor weight;  // in x out
    Tensor bias;    // out
  };
  std::vector<Layer> layers;
};

struct AbmilParams {
  Tensor embed_weight;  // in x embed
  Tensor embed_bias;    // embed
  Tensor gate_v;        // embed x attn
  Tensor gate_u;        // embed x attn
  Tensor attn_w;        // attn x 1
};

struct EncoderParams {
  EncoderConfig config;
  Standardizer standardizer;
  SnnParams snn;
  AbmilParams abmil;

  std::vector<Tensor> parameters();
};

EncoderParams make_encoder_params(const EncoderConfig& config,
                                  std::mt19937_64& rng);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

// (1 x last_hidden) token from a tabular vector.
Tensor snn_forward(const Tensor& x, const EncoderParams& params,
                   const ForwardOptions& opt = {});

struct AbmilOutput {
  Tensor tokens;                          // pooled (+ instance tokens)
  std::vector<double> attention_weights;  // original instance order
};

// Gated attention pooling. Instances are reduced in a canonical
// (content-sorted) order so permuting the bag cannot change the result,
// bit for bit.
AbmilOutput abmil_forward(const Tensor& bag, const EncoderParams& params,
                          const ForwardOptions& opt = {});

// Dispatch on the configured kind; standardizes first when fitted.
Tensor encode(const ModalitySample& sample, const EncoderParams& params,
              const ForwardOptions& opt = {});

}  // namespace mmlego
