#pragma once

// LegoFuse: compose trained blocks into one sequential model threading a
// single shared latent through every block's update layers, either block by
// block (stack) or round-robin across blocks (weave), then fine-tune all
// parameters for a small fixed number of epochs on paired data.

#include <string>
#include <vector>

#include "mmlego/legoblock.hpp"
#include "mmlego/legomerge.hpp"

namespace mmlego {

enum class FuseMethod { kStack, kWeave };

FuseMethod fuse_method_from_string(const std::string& s);
std::string to_string(FuseMethod method);

enum class FusedLatentInit {
  kMergedSpectra,  // spectra of the blocks' latent inits, merged per bin
  kFirstBlock,
};

struct FuseLayer {
  std::size_t block_index = 0;
  std::size_t pass_index = 0;
};

struct FusedModel {
  std::vector<LegoBlock> blocks;  // deep copies, all trainable
  std::vector<FuseLayer> schedule;
  Tensor latent_init;  // shared across the whole schedule
  HeadParams head;
  FuseMethod method = FuseMethod::kStack;

  const BlockConfig& block_config() const { return blocks.front().config; }
  const TaskSpec& task() const { return blocks.front().task; }
  std::vector<Tensor> parameters();
};

// Builds the layer schedule and the shared latent/head initialization; no
// training happens here.
FusedModel build_fused(const std::vector<LegoBlock>& blocks,
                       FuseMethod method,
                       FusedLatentInit latent_init = FusedLatentInit::kMergedSpectra,
                       const SlerpSpec& head_slerp = {});

// Threads the shared latent through the scheduled layers of the available
// modalities; layers of missing modalities are skipped. The last executed
// layer stays in the frequency domain for the head.
Tensor fused_forward(const FusedModel& model, const SampleSet& samples,
                     const ForwardOptions& opt = {});

struct MultimodalExample {
  SampleSet inputs;
  double value = 0.0;
  bool censored = false;
};

struct FineTuneSettings {
  std::size_t epochs = 2;  // exact budget, no early stopping
  double lr = 0.003;
  std::size_t batch_size = 128;
  double l1 = 0.0002;
  std::uint64_t seed = 1;
};

struct FineTuneReport {
  std::vector<double> epoch_loss;
  double pre_metric = 0.0;
  double post_metric = 0.0;
};

// Optimizes every parameter (encoders included) for exactly
// `settings.epochs` epochs on fully paired examples.
FineTuneReport fine_tune(FusedModel& model,
                         const std::vector<MultimodalExample>& train,
                         const std::vector<MultimodalExample>& val,
                         const FineTuneSettings& settings);

double evaluate_fused(const FusedModel& model,
                      const std::vector<MultimodalExample>& examples);

}  // namespace mmlego
