#pragma once

// Experiment configuration. Built-in defaults are the reference
// hyperparameters (lr 0.003, 40 epochs, patience 7, L1 2e-4, batch 512,
// Adam + ReduceLROnPlateau; tune epochs 2, stack fuse, harmonic merge,
// slerp heads, alpha 0.5, track-imaginary, normalise, 17x126 latent,
// depth 4, attention dropout 0.45, FCNN dropout 0.36). Config files
// override them; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmlego/datagen.hpp"
#include "mmlego/legoblock.hpp"
#include "mmlego/legofuse.hpp"
#include "mmlego/legomerge.hpp"

namespace mmlego {

struct SharedConfig {
  double lr = 0.003;
  std::size_t epochs = 40;
  std::size_t patience = 7;
  double l1 = 0.0002;
  std::size_t batch = 512;
  std::string optimizer = "adam";
  std::string scheduler = "plateau";
};

struct MmLegoSection {
  std::size_t tune_epochs = 2;
  std::string fuse_method = "stack";
  std::string merge_method = "harmonic";
  std::string head_method = "slerp";
  double alpha = 0.5;
  bool track_imaginary = true;
  bool normalise = true;
  std::size_t latent_channels = 17;
  std::size_t latent_dim = 126;
  std::size_t depth = 4;
  double attn_dropout = 0.45;
  double fcnn_dropout = 0.36;
  std::string phase_mode = "literal";
  bool residual = true;
  bool head_uses_imag = false;
  std::size_t attn_heads = 0;   // 0 = derived from latent_dim
  std::size_t qk_head_dim = 0;  // 0 = default 64 capped at latent_dim
};

struct ModalityConfig {
  ModalitySpec spec;
  std::string encoder;  // snn | abmil | identity; empty = by table kind
  std::vector<std::size_t> snn_dims = {256, 256, 256, 256};
  double snn_dropout = 0.25;
  std::size_t abmil_embed_dim = 512;
  std::size_t abmil_attn_dim = 256;
  double abmil_attn_dropout = 0.25;
};

struct DatasetSection {
  std::size_t n_samples = 2000;
  std::size_t latent_factor_dim = 6;
  std::vector<ModalityConfig> modalities;
  TaskSpec task;
  double censor_rate = 0.3;
  double overlap = 1.0;
  std::uint64_t seed = 1;

  SyntheticSpec synthetic_spec() const;
};

struct RunConfig {
  SharedConfig shared;
  MmLegoSection mm_lego;
  DatasetSection dataset;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir = "out";

  BlockConfig block_config() const;
  MergeConfig merge_config() const;
  FineTuneSettings fine_tune_settings(std::uint64_t seed) const;
  TrainSettings train_settings(std::uint64_t seed) const;
  EncoderConfig encoder_config(const ModalityConfig& modality) const;
  const ModalityConfig& modality(const std::string& name) const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace mmlego
