#pragma once

// Training-free multimodal merging: per-bin harmonic-mean aggregation of the
// blocks' final frequency-domain latents at inference time, plus a one-off
// spherical interpolation of the task heads at merge time. No gradient is
// ever computed.

#include <map>
#include <string>
#include <vector>

#include "mmlego/legoblock.hpp"
#include "mmlego/spectral.hpp"

namespace mmlego {

struct SlerpSpec {
  double alpha = 0.5;  // interpolation factor in [0, 1]
  double eps = 1e-7;   // sin(theta) threshold for the linear fallback

  void validate() const;
};

// w1*sin(theta*(1-alpha))/sin(theta) + w2*sin(theta*alpha)/sin(theta) with
// the angle clamped before acos; near-parallel vectors fall back to linear
// interpolation.
std::vector<double> slerp(const std::vector<double>& w1,
                          const std::vector<double>& w2, double alpha,
                          double eps = 1e-7);

struct MergeConfig {
  PhaseMode phase_mode = PhaseMode::kLiteral;
  SlerpSpec head_slerp;
  // When false only the final linear layer is interpolated and the
  // layer-norm parameters are taken from the first block.
  bool merge_layer_norm = true;
};

struct MergedModel {
  std::vector<LegoBlock> blocks;  // deep copies, frozen
  MergeConfig config;
  HeadParams head;
  std::vector<std::string> modality_order;  // fixes the slerp fold order

  const BlockConfig& block_config() const { return blocks.front().config; }
  const TaskSpec& task() const { return blocks.front().task; }
};

// Per-modality inputs for multimodal inference; a missing key means the
// modality is unavailable for this sample.
using SampleSet = std::map<std::string, ModalitySample>;

// Deep clone of a trained block (parameters, standardizer, task state).
LegoBlock clone_block(const LegoBlock& block);

// Sequential pairwise slerp over the heads' packed parameter vectors
// (weight || bias, plus layer-norm gain/bias when `merge_layer_norm`).
HeadParams slerp_heads(const std::vector<const HeadParams*>& heads,
                       const SlerpSpec& spec, bool merge_layer_norm);

// Validates latent/task compatibility and interpolates the heads
// (sequential pairwise slerp in block order). Source blocks are copied,
// never mutated, and no optimizer step runs.
MergedModel merge_blocks(const std::vector<LegoBlock>& blocks,
                         const MergeConfig& config = {});

// Final latents of the available blocks, merged per bin, under the merged
// head. A single available modality passes through unmerged.
Tensor merged_forward(const MergedModel& model, const SampleSet& samples);

// Convenience: metric of the merged model over an evaluation set.
double evaluate_merged(const MergedModel& model,
                       const std::vector<SampleSet>& inputs,
                       const std::vector<LabeledSample>& labels);

}  // namespace mmlego
