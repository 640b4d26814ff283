#pragma once

// Synthetic multimodal data with a controllable shared signal: every sample
// draws a latent factor z, each modality observes a noisy linear (tabular)
// or instance-replicated (bag) view of it, and labels derive from z alone.
// Each modality is informative on its own and the pair is more informative
// together, so a merge has something real to gain.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmlego/encoders.hpp"
#include "mmlego/training.hpp"

namespace mmlego {

struct ModalitySpec {
  std::string name;
  bool is_bag = false;
  std::size_t feature_dim = 16;
  std::size_t min_instances = 4;  // bags
  std::size_t max_instances = 8;
  // Ratio of signal scale to noise scale. 0 means pure noise; infinity
  // means a noise-free view.
  double snr = 2.0;
};

struct SyntheticSpec {
  std::size_t n_samples = 2000;
  std::size_t latent_factor_dim = 6;
  std::vector<ModalitySpec> modalities;
  TaskSpec task;
  double censor_rate = 0.3;  // survival tasks
  // Fraction of samples carrying every modality; the rest carry exactly
  // one, assigned round-robin.
  double overlap = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> val;
};

struct MultimodalDataset {
  SyntheticSpec spec;
  std::vector<std::string> sample_ids;
  std::vector<std::string> modality_names;
  // modality_tables[m][i] is sample i observed through modality m.
  std::vector<std::vector<ModalitySample>> modality_tables;
  std::vector<double> label_values;  // class index, or time for survival
  std::vector<bool> censored;
  // availability[i][m]: modality m observed for sample i.
  std::vector<std::vector<std::uint8_t>> availability;
  std::vector<FoldSplit> folds;

  std::size_t n_samples() const { return sample_ids.size(); }
  std::size_t modality_index(const std::string& name) const;
  bool available(std::size_t sample, std::size_t modality) const {
    return availability[sample][modality] != 0;
  }
};

MultimodalDataset generate(const SyntheticSpec& spec);

// Repeated random sub-sampling: each fold is an independent shuffle split
// into train/test/val by `ratios` (in that order).
std::vector<FoldSplit> split_folds(std::size_t n_samples,
                                   std::size_t n_folds = 5,
                                   std::array<double, 3> ratios = {0.70, 0.15,
                                                                   0.15},
                                   std::uint64_t seed = 1);

// Availability mask over `indices` with exactly floor(rho * n) of them
// paired and the rest single-modality, round-robin. Used to carve
// non-overlapping training sets out of a paired dataset.
std::vector<std::vector<std::uint8_t>> overlap_mask(
    const std::vector<std::size_t>& indices, std::size_t n_samples,
    std::size_t n_modalities, double rho, std::uint64_t seed);

// ---- on-disk formats ----
// Tabular modality: CSV with header sample_id,f0..f{d-1}.
// Bag modality: binary container, magic "MMLG", version u16, then one
// record per sample: u32 id length, UTF-8 id, u32 n_instances,
// u32 feat_dim, row-major little-endian f64 payload.
// Labels: CSV sample_id,task_kind,value,censorship.

void save_tabular_csv(const std::filesystem::path& path,
                      const MultimodalDataset& dataset,
                      const std::string& modality);
void save_bag_file(const std::filesystem::path& path,
                   const MultimodalDataset& dataset,
                   const std::string& modality);
void save_labels_csv(const std::filesystem::path& path,
                     const MultimodalDataset& dataset);
// Writes every modality table plus labels and a JSON manifest into `dir`.
void save_dataset(const std::filesystem::path& dir,
                  const MultimodalDataset& dataset);

struct TabularTable {
  std::vector<std::string> sample_ids;
  std::vector<ModalitySample> samples;
  std::size_t feature_dim = 0;
};
TabularTable load_tabular_csv(const std::filesystem::path& path);

struct BagTable {
  std::vector<std::string> sample_ids;
  std::vector<ModalitySample> samples;
  std::size_t feature_dim = 0;
};
BagTable load_bag_file(const std::filesystem::path& path);

struct LabelTable {
  std::vector<std::string> sample_ids;
  TaskKind kind = TaskKind::kBinary;
  std::vector<double> values;
  std::vector<bool> censored;
};
LabelTable load_labels_csv(const std::filesystem::path& path);

MultimodalDataset load_dataset(const std::filesystem::path& dir);

}  // namespace mmlego
