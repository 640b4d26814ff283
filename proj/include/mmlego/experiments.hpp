#pragma once

// Experiment pipelines over synthetic data: per-modality block training,
// merging, fusing, ensembling, and masked/unpaired evaluation. The CLI and
// the acceptance suite both drive these.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmlego/config.hpp"
#include "mmlego/datagen.hpp"
#include "mmlego/legofuse.hpp"
#include "mmlego/legomerge.hpp"

namespace mmlego {

using AvailabilityMask = std::vector<std::vector<std::uint8_t>>;

// Labeled single-modality view over `indices`; samples whose modality is
// unavailable (dataset mask, or `mask` override) are dropped.
std::vector<LabeledSample> modality_view(const MultimodalDataset& dataset,
                                         const std::string& modality,
                                         const std::vector<std::size_t>& indices,
                                         const AvailabilityMask* mask = nullptr);

// Multimodal examples over `indices`; each carries whichever modalities are
// available.
std::vector<MultimodalExample> multimodal_view(
    const MultimodalDataset& dataset, const std::vector<std::size_t>& indices,
    const AvailabilityMask* mask = nullptr);

// Builds and trains the block for one modality on the given fold's train
// and validation splits.
struct BlockRun {
  LegoBlock block;
  TrainReport report;
  double test_metric = 0.0;
};

BlockRun train_modality_block(const RunConfig& cfg,
                              const MultimodalDataset& dataset,
                              std::size_t fold, const std::string& modality,
                              std::uint64_t seed,
                              const AvailabilityMask* train_mask = nullptr);

// Test-split metric of one block evaluated unimodally.
double block_test_metric(const LegoBlock& block,
                         const MultimodalDataset& dataset, std::size_t fold);

// Logit-averaging ensemble of unimodal blocks over the paired test split.
double ensemble_test_metric(const std::vector<LegoBlock>& blocks,
                            const MultimodalDataset& dataset, std::size_t fold);

double merged_test_metric(const MergedModel& model,
                          const MultimodalDataset& dataset, std::size_t fold,
                          const std::string& masked_modality = "");

double fused_test_metric(const FusedModel& model,
                         const MultimodalDataset& dataset, std::size_t fold);

// One full pipeline pass for a (seed, fold) pair: train a block per
// modality, merge, ensemble, optionally fuse, optionally retrain under an
// overlap-0 mask, optionally evaluate with each modality masked.
struct SeedRunOptions {
  bool with_fuse = true;
  bool with_masked_eval = true;
  bool with_unpaired = true;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::map<std::string, double> unimodal;       // modality -> test metric
  double merged = 0.0;
  double ensemble = 0.0;
  double fused_pre = 0.0;
  double fused_post = 0.0;
  std::map<std::string, double> merged_masked;  // masked modality -> metric
  double merged_unpaired = 0.0;                 // blocks trained at rho = 0
  double block_epoch_seconds = 0.0;             // mean across blocks
  double merge_seconds = 0.0;
  std::uint64_t merge_gradient_steps = 0;
};

SeedOutcome run_seed(const RunConfig& cfg, const MultimodalDataset& dataset,
                     std::uint64_t seed, std::size_t fold,
                     const SeedRunOptions& options = {});

// Overlap sweep: per rho and seed, train blocks on rho-masked training
// sets, merge, and evaluate merged model and ensemble on the paired test
// split.
struct OverlapPoint {
  double rho = 0.0;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  double merged = 0.0;
  double ensemble = 0.0;
};

std::vector<OverlapPoint> run_overlap_sweep(const RunConfig& cfg,
                                            const MultimodalDataset& dataset,
                                            const std::vector<double>& rhos,
                                            const std::vector<std::uint64_t>& seeds);

}  // namespace mmlego
