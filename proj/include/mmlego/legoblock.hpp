#pragma once

// The LegoBlock wrapper: a learnable c x d latent that is iteratively
// updated in the frequency domain by cross-attending to the wrapped
// encoder's output. Each pass transforms the latent, updates the real
// spectrum, carries the imaginary spectrum through unchanged, and inverse
// transforms back; the final pass stays in the frequency domain where the
// task head lives.

#include <cstdint>
#include <string>
#include <vector>

#include "mmlego/encoders.hpp"
#include "mmlego/spectral.hpp"
#include "mmlego/tensor.hpp"
#include "mmlego/training.hpp"

namespace mmlego {

struct BlockConfig {
  std::size_t latent_channels = 17;  // c
  std::size_t latent_dim = 126;      // d
  std::size_t depth = 4;             // update passes S
  bool residual = true;
  bool share_attn_across_passes = true;
  std::size_t attn_heads = 0;    // 0: latent_dim/64 rounded, at least 1
  std::size_t qk_head_dim = 0;   // 0: 64, capped at latent_dim
  double attn_dropout = 0.45;
  double fcnn_dropout = 0.36;
  bool track_imaginary = true;
  bool head_uses_imag = false;
  double layer_norm_eps = 1e-5;

  std::size_t resolved_heads() const;
  std::size_t resolved_qk_dim() const;
  void validate() const;
};

struct AttentionParams {
  Tensor w_q;  // latent_dim x (heads * qk_dim)
  Tensor w_k;  // encoder_dim x (heads * qk_dim)
  Tensor w_v;  // encoder_dim x latent_dim
};

struct HeadParams {
  Tensor ln_gain;
  Tensor ln_bias;
  Tensor weight;  // flattened-latent x output_dim
  Tensor bias;    // output_dim
};

struct LegoBlock {
  std::string modality;
  TaskSpec task;
  BlockConfig config;
  EncoderParams encoder;
  Tensor latent_init;  // c x d
  std::vector<AttentionParams> attn;  // size 1 when shared, else depth
  HeadParams head;

  const AttentionParams& attn_for_pass(std::size_t pass) const;
  std::size_t head_input_dim() const;
  std::vector<Tensor> parameters();
  void set_requires_grad(bool enabled);
};

// Initialization draws from named streams of `master_seed`, so blocks built
// for different modalities under the same seed start from the same latent
// and (shape permitting) the same attention/head weights. Merging
// independently trained blocks relies on that common starting point.
LegoBlock make_block(const std::string& modality, const TaskSpec& task,
                     const BlockConfig& config,
                     const EncoderConfig& encoder_config,
                     std::uint64_t master_seed);

// One latent update pass: spatial latent in, spatial latent out.
Tensor block_update(const Tensor& latent, const Tensor& encoder_tokens,
                    const AttentionParams& attn, const BlockConfig& config,
                    const ForwardOptions& opt = {});

// The pass without the final inverse transform: transform the latent,
// cross-attend its real spectrum onto the (already transformed) encoder
// spectrum, carry the imaginary part through. Returns (real, imag). Shared
// by the block forward and the fused schedule.
std::pair<Tensor, Tensor> update_spectrum(const Tensor& latent,
                                          const Tensor& kv_spec,
                                          const AttentionParams& attn,
                                          const BlockConfig& config,
                                          const ForwardOptions& opt = {});

struct BlockForward {
  Tensor freq_real;  // (L_S)^r
  Tensor freq_imag;  // (L_S)^i
  Tensor logits;     // 1 x output_dim
};

BlockForward block_forward(const LegoBlock& block,
                           const ModalitySample& sample,
                           const ForwardOptions& opt = {});

// Head application shared by the merged and fused paths.
Tensor apply_head(const HeadParams& head, const Tensor& freq_real,
                  const Tensor& freq_imag, const BlockConfig& config,
                  const ForwardOptions& opt = {});

// ---- training ----

struct LabeledSample {
  ModalitySample features;
  double value = 0.0;  // class index, or raw time for survival
  bool censored = false;
};

struct TrainSettings {
  double lr = 0.003;
  std::size_t epochs = 40;
  std::size_t patience = 7;
  double l1 = 0.0002;
  std::size_t batch_size = 512;
  double scheduler_factor = 0.5;
  std::size_t scheduler_patience = 3;
  std::uint64_t seed = 1;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> history;
  double best_val_loss = 0.0;
  double final_val_metric = 0.0;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  bool diverged = false;
  double seconds_per_epoch = 0.0;
};

// Converts raw label values into task targets; fits survival bin edges on
// the training samples when the block does not carry them yet.
std::vector<SurvivalLabel> survival_labels(const TaskSpec& task,
                                           const std::vector<LabeledSample>& samples);

// Task metric from per-sample logits: AUC (binary), macro-AUC (multiclass)
// or concordance index (survival).
double evaluate_metric(const TaskSpec& task,
                       const std::vector<std::vector<double>>& logits,
                       const std::vector<LabeledSample>& samples);

// Loss of a logit batch under the block's task.
Tensor task_loss(const TaskSpec& task, const Tensor& logits,
                 const std::vector<LabeledSample>& samples);

TrainReport train_block(LegoBlock& block,
                        const std::vector<LabeledSample>& train,
                        const std::vector<LabeledSample>& val,
                        const TrainSettings& settings);

}  // namespace mmlego
