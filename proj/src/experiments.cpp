#include "mmlego/experiments.hpp"

#include <chrono>

namespace mmlego {

namespace {

bool modality_available(const MultimodalDataset& dataset,
                        const AvailabilityMask* mask, std::size_t sample,
                        std::size_t modality) {
  if (mask != nullptr) return (*mask)[sample][modality] != 0;
  return dataset.available(sample, modality);
}

}  // namespace

std::vector<LabeledSample> modality_view(const MultimodalDataset& dataset,
                                         const std::string& modality,
                                         const std::vector<std::size_t>& indices,
                                         const AvailabilityMask* mask) {
  const std::size_t m = dataset.modality_index(modality);
  std::vector<LabeledSample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (!modality_available(dataset, mask, i, m)) continue;
    LabeledSample s;
    s.features = dataset.modality_tables[m][i];
    s.value = dataset.label_values[i];
    s.censored = dataset.censored[i];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<MultimodalExample> multimodal_view(
    const MultimodalDataset& dataset, const std::vector<std::size_t>& indices,
    const AvailabilityMask* mask) {
  std::vector<MultimodalExample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    MultimodalExample x;
    for (std::size_t m = 0; m < dataset.modality_names.size(); ++m) {
      if (!modality_available(dataset, mask, i, m)) continue;
      x.inputs[dataset.modality_names[m]] = dataset.modality_tables[m][i];
    }
    x.value = dataset.label_values[i];
    x.censored = dataset.censored[i];
    out.push_back(std::move(x));
  }
  return out;
}

BlockRun train_modality_block(const RunConfig& cfg,
                              const MultimodalDataset& dataset,
                              std::size_t fold, const std::string& modality,
                              std::uint64_t seed,
                              const AvailabilityMask* train_mask) {
  const FoldSplit& split = dataset.folds.at(fold);
  const std::vector<LabeledSample> train =
      modality_view(dataset, modality, split.train, train_mask);
  const std::vector<LabeledSample> val =
      modality_view(dataset, modality, split.val);

  const ModalityConfig& mod_cfg = cfg.modality(modality);
  BlockRun run{make_block(modality, cfg.dataset.task, cfg.block_config(),
                          cfg.encoder_config(mod_cfg), seed),
               {}, 0.0};
  run.report = train_block(run.block, train, val, cfg.train_settings(seed));
  run.test_metric = block_test_metric(run.block, dataset, fold);
  return run;
}

double block_test_metric(const LegoBlock& block,
                         const MultimodalDataset& dataset, std::size_t fold) {
  const FoldSplit& split = dataset.folds.at(fold);
  const std::vector<LabeledSample> test =
      modality_view(dataset, block.modality, split.test);
  std::vector<std::vector<double>> rows;
  rows.reserve(test.size());
  for (const LabeledSample& s : test) {
    const BlockForward fwd = block_forward(block, s.features);
    rows.emplace_back(fwd.logits.values().begin(), fwd.logits.values().end());
  }
  return evaluate_metric(block.task, rows, test);
}

double ensemble_test_metric(const std::vector<LegoBlock>& blocks,
                            const MultimodalDataset& dataset,
                            std::size_t fold) {
  const FoldSplit& split = dataset.folds.at(fold);
  const std::vector<MultimodalExample> test =
      multimodal_view(dataset, split.test);
  std::vector<std::vector<double>> rows;
  std::vector<LabeledSample> labels;
  rows.reserve(test.size());
  for (const MultimodalExample& x : test) {
    std::vector<double> mean_logits;
    std::size_t used = 0;
    for (const LegoBlock& block : blocks) {
      auto it = x.inputs.find(block.modality);
      if (it == x.inputs.end()) continue;
      const BlockForward fwd = block_forward(block, it->second);
      if (mean_logits.empty()) mean_logits.assign(fwd.logits.numel(), 0.0);
      for (std::size_t j = 0; j < mean_logits.size(); ++j) {
        mean_logits[j] += fwd.logits.values()[j];
      }
      ++used;
    }
    if (used == 0) continue;
    for (double& v : mean_logits) v /= static_cast<double>(used);
    rows.push_back(std::move(mean_logits));
    LabeledSample lbl;
    lbl.value = x.value;
    lbl.censored = x.censored;
    labels.push_back(lbl);
  }
  return evaluate_metric(blocks.front().task, rows, labels);
}

double merged_test_metric(const MergedModel& model,
                          const MultimodalDataset& dataset, std::size_t fold,
                          const std::string& masked_modality) {
  const FoldSplit& split = dataset.folds.at(fold);
  std::vector<MultimodalExample> test = multimodal_view(dataset, split.test);
  std::vector<SampleSet> inputs;
  std::vector<LabeledSample> labels;
  inputs.reserve(test.size());
  for (MultimodalExample& x : test) {
    if (!masked_modality.empty()) x.inputs.erase(masked_modality);
    if (x.inputs.empty()) continue;
    inputs.push_back(std::move(x.inputs));
    LabeledSample lbl;
    lbl.value = x.value;
    lbl.censored = x.censored;
    labels.push_back(lbl);
  }
  return evaluate_merged(model, inputs, labels);
}

double fused_test_metric(const FusedModel& model,
                         const MultimodalDataset& dataset, std::size_t fold) {
  const FoldSplit& split = dataset.folds.at(fold);
  return evaluate_fused(model, multimodal_view(dataset, split.test));
}

SeedOutcome run_seed(const RunConfig& cfg, const MultimodalDataset& dataset,
                     std::uint64_t seed, std::size_t fold,
                     const SeedRunOptions& options) {
  SeedOutcome outcome;
  outcome.seed = seed;
  outcome.fold = fold;

  std::vector<LegoBlock> blocks;
  double epoch_seconds = 0.0;
  for (const ModalityConfig& mod : cfg.dataset.modalities) {
    BlockRun run = train_modality_block(cfg, dataset, fold, mod.spec.name, seed);
    outcome.unimodal[mod.spec.name] = run.test_metric;
    epoch_seconds += run.report.seconds_per_epoch;
    blocks.push_back(std::move(run.block));
  }
  outcome.block_epoch_seconds =
      epoch_seconds / static_cast<double>(blocks.size());

  const std::uint64_t steps_before = gradient_steps();
  const auto merge_t0 = std::chrono::steady_clock::now();
  const MergedModel merged = merge_blocks(blocks, cfg.merge_config());
  const auto merge_t1 = std::chrono::steady_clock::now();
  outcome.merge_seconds =
      std::chrono::duration<double>(merge_t1 - merge_t0).count();
  outcome.merge_gradient_steps = gradient_steps() - steps_before;

  outcome.merged = merged_test_metric(merged, dataset, fold);
  outcome.ensemble = ensemble_test_metric(blocks, dataset, fold);

  if (options.with_masked_eval) {
    for (const ModalityConfig& mod : cfg.dataset.modalities) {
      outcome.merged_masked[mod.spec.name] =
          merged_test_metric(merged, dataset, fold, mod.spec.name);
    }
  }

  if (options.with_fuse) {
    FusedModel fused = build_fused(
        blocks, fuse_method_from_string(cfg.mm_lego.fuse_method));
    const FoldSplit& split = dataset.folds.at(fold);
    const FineTuneReport report =
        fine_tune(fused, multimodal_view(dataset, split.train),
                  multimodal_view(dataset, split.val),
                  cfg.fine_tune_settings(seed));
    outcome.fused_pre = report.pre_metric;
    outcome.fused_post = fused_test_metric(fused, dataset, fold);
  }

  if (options.with_unpaired) {
    const FoldSplit& split = dataset.folds.at(fold);
    const AvailabilityMask mask =
        overlap_mask(split.train, dataset.n_samples(),
                     dataset.modality_names.size(), 0.0, seed);
    std::vector<LegoBlock> unpaired_blocks;
    for (const ModalityConfig& mod : cfg.dataset.modalities) {
      unpaired_blocks.push_back(
          train_modality_block(cfg, dataset, fold, mod.spec.name, seed, &mask)
              .block);
    }
    const MergedModel unpaired_merged =
        merge_blocks(unpaired_blocks, cfg.merge_config());
    outcome.merged_unpaired = merged_test_metric(unpaired_merged, dataset, fold);
  }
  return outcome;
}

std::vector<OverlapPoint> run_overlap_sweep(
    const RunConfig& cfg, const MultimodalDataset& dataset,
    const std::vector<double>& rhos, const std::vector<std::uint64_t>& seeds) {
  std::vector<OverlapPoint> points;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const std::uint64_t seed = seeds[s];
    const std::size_t fold = s % dataset.folds.size();
    for (double rho : rhos) {
      const FoldSplit& split = dataset.folds.at(fold);
      const AvailabilityMask mask =
          overlap_mask(split.train, dataset.n_samples(),
                       dataset.modality_names.size(), rho, seed);
      std::vector<LegoBlock> blocks;
      for (const ModalityConfig& mod : cfg.dataset.modalities) {
        blocks.push_back(
            train_modality_block(cfg, dataset, fold, mod.spec.name, seed, &mask)
                .block);
      }
      OverlapPoint point;
      point.rho = rho;
      point.seed = seed;
      point.fold = fold;
      point.merged = merged_test_metric(merge_blocks(blocks, cfg.merge_config()),
                                        dataset, fold);
      point.ensemble = ensemble_test_metric(blocks, dataset, fold);
      points.push_back(point);
    }
  }
  return points;
}

}  // namespace mmlego
