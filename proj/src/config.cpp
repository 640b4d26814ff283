#include "mmlego/config.hpp"

#include <set>

#include "mmlego/io.hpp"

namespace mmlego {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (allowed.find(it.key()) == allowed.end()) {
      throw ConfigError("unknown key '" + it.key() + "' in " + section);
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).template get<T>();
}

}  // namespace

SyntheticSpec DatasetSection::synthetic_spec() const {
  SyntheticSpec spec;
  spec.n_samples = n_samples;
  spec.latent_factor_dim = latent_factor_dim;
  for (const ModalityConfig& m : modalities) spec.modalities.push_back(m.spec);
  spec.task = task;
  spec.censor_rate = censor_rate;
  spec.overlap = overlap;
  spec.seed = seed;
  return spec;
}

BlockConfig RunConfig::block_config() const {
  BlockConfig c;
  c.latent_channels = mm_lego.latent_channels;
  c.latent_dim = mm_lego.latent_dim;
  c.depth = mm_lego.depth;
  c.residual = mm_lego.residual;
  c.attn_heads = mm_lego.attn_heads;
  c.qk_head_dim = mm_lego.qk_head_dim;
  c.attn_dropout = mm_lego.attn_dropout;
  c.fcnn_dropout = mm_lego.fcnn_dropout;
  c.track_imaginary = mm_lego.track_imaginary;
  c.head_uses_imag = mm_lego.head_uses_imag;
  return c;
}

MergeConfig RunConfig::merge_config() const {
  MergeConfig c;
  c.phase_mode = phase_mode_from_string(mm_lego.phase_mode);
  c.head_slerp.alpha = mm_lego.alpha;
  return c;
}

FineTuneSettings RunConfig::fine_tune_settings(std::uint64_t seed) const {
  FineTuneSettings s;
  s.epochs = mm_lego.tune_epochs;
  s.lr = shared.lr;
  s.batch_size = shared.batch;
  s.l1 = shared.l1;
  s.seed = seed;
  return s;
}

TrainSettings RunConfig::train_settings(std::uint64_t seed) const {
  TrainSettings s;
  s.lr = shared.lr;
  s.epochs = shared.epochs;
  s.patience = shared.patience;
  s.l1 = shared.l1;
  s.batch_size = shared.batch;
  s.seed = seed;
  return s;
}

EncoderConfig RunConfig::encoder_config(const ModalityConfig& modality) const {
  EncoderConfig c;
  const std::string kind =
      modality.encoder.empty() ? (modality.spec.is_bag ? "abmil" : "snn")
                               : modality.encoder;
  c.kind = encoder_kind_from_string(kind);
  c.input_dim = modality.spec.feature_dim;
  c.hidden_dims = modality.snn_dims;
  c.dropout = modality.snn_dropout;
  c.abmil_embed_dim = modality.abmil_embed_dim;
  c.abmil_attn_dim = modality.abmil_attn_dim;
  c.abmil_attn_dropout = modality.abmil_attn_dropout;
  c.normalise = mm_lego.normalise;
  return c;
}

const ModalityConfig& RunConfig::modality(const std::string& name) const {
  for (const ModalityConfig& m : dataset.modalities) {
    if (m.spec.name == name) return m;
  }
  throw ConfigError("config has no modality '" + name + "'");
}

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  reject_unknown_keys(j, {"shared", "mm_lego", "dataset", "seeds", "output_dir"},
                      "config root");

  if (j.contains("shared")) {
    const json& s = j.at("shared");
    reject_unknown_keys(s,
                        {"lr", "epochs", "patience", "l1", "batch", "optimizer",
                         "scheduler"},
                        "shared");
    maybe(s, "lr", cfg.shared.lr);
    maybe(s, "epochs", cfg.shared.epochs);
    maybe(s, "patience", cfg.shared.patience);
    maybe(s, "l1", cfg.shared.l1);
    maybe(s, "batch", cfg.shared.batch);
    maybe(s, "optimizer", cfg.shared.optimizer);
    maybe(s, "scheduler", cfg.shared.scheduler);
  }
  if (cfg.shared.optimizer != "adam") {
    throw ConfigError("unsupported optimizer '" + cfg.shared.optimizer + "'");
  }
  if (cfg.shared.scheduler != "plateau") {
    throw ConfigError("unsupported scheduler '" + cfg.shared.scheduler + "'");
  }

  if (j.contains("mm_lego")) {
    const json& s = j.at("mm_lego");
    reject_unknown_keys(
        s, {"tune_epochs", "fuse_method", "merge_method", "head_method",
            "alpha", "track_imaginary", "normalise", "latent_channels",
            "latent_dim", "depth", "attn_dropout", "fcnn_dropout",
            "phase_mode", "residual", "head_uses_imag", "attn_heads",
            "qk_head_dim"},
        "mm_lego");
    maybe(s, "tune_epochs", cfg.mm_lego.tune_epochs);
    maybe(s, "fuse_method", cfg.mm_lego.fuse_method);
    maybe(s, "merge_method", cfg.mm_lego.merge_method);
    maybe(s, "head_method", cfg.mm_lego.head_method);
    maybe(s, "alpha", cfg.mm_lego.alpha);
    maybe(s, "track_imaginary", cfg.mm_lego.track_imaginary);
    maybe(s, "normalise", cfg.mm_lego.normalise);
    maybe(s, "latent_channels", cfg.mm_lego.latent_channels);
    maybe(s, "latent_dim", cfg.mm_lego.latent_dim);
    maybe(s, "depth", cfg.mm_lego.depth);
    maybe(s, "attn_dropout", cfg.mm_lego.attn_dropout);
    maybe(s, "fcnn_dropout", cfg.mm_lego.fcnn_dropout);
    maybe(s, "phase_mode", cfg.mm_lego.phase_mode);
    maybe(s, "residual", cfg.mm_lego.residual);
    maybe(s, "head_uses_imag", cfg.mm_lego.head_uses_imag);
    maybe(s, "attn_heads", cfg.mm_lego.attn_heads);
    maybe(s, "qk_head_dim", cfg.mm_lego.qk_head_dim);
  }
  if (cfg.mm_lego.fuse_method != "stack" && cfg.mm_lego.fuse_method != "weave") {
    throw ConfigError("unsupported fuse method '" + cfg.mm_lego.fuse_method + "'");
  }
  if (cfg.mm_lego.merge_method != "harmonic") {
    throw ConfigError("unsupported merge method '" + cfg.mm_lego.merge_method + "'");
  }
  if (cfg.mm_lego.head_method != "slerp") {
    throw ConfigError("unsupported head method '" + cfg.mm_lego.head_method + "'");
  }
  phase_mode_from_string(cfg.mm_lego.phase_mode);

  if (j.contains("dataset")) {
    const json& s = j.at("dataset");
    reject_unknown_keys(s,
                        {"n_samples", "latent_factor_dim", "modalities", "task",
                         "n_bins", "n_classes", "censor_rate", "overlap",
                         "seed"},
                        "dataset");
    maybe(s, "n_samples", cfg.dataset.n_samples);
    maybe(s, "latent_factor_dim", cfg.dataset.latent_factor_dim);
    maybe(s, "censor_rate", cfg.dataset.censor_rate);
    maybe(s, "overlap", cfg.dataset.overlap);
    maybe(s, "seed", cfg.dataset.seed);
    if (s.contains("task")) {
      cfg.dataset.task.kind =
          task_kind_from_string(s.at("task").get<std::string>());
    }
    maybe(s, "n_bins", cfg.dataset.task.n_bins);
    maybe(s, "n_classes", cfg.dataset.task.n_classes);
    if (s.contains("modalities")) {
      cfg.dataset.modalities.clear();
      for (const json& mj : s.at("modalities")) {
        reject_unknown_keys(
            mj, {"name", "kind", "feature_dim", "min_instances",
                 "max_instances", "snr", "encoder", "snn_dims", "snn_dropout",
                 "abmil_embed_dim", "abmil_attn_dim", "abmil_attn_dropout"},
            "dataset.modalities");
        ModalityConfig m;
        m.spec.name = mj.at("name").get<std::string>();
        if (mj.contains("kind")) {
          const std::string kind = mj.at("kind").get<std::string>();
          if (kind != "tabular" && kind != "bag") {
            throw ConfigError("modality kind must be tabular or bag");
          }
          m.spec.is_bag = kind == "bag";
        }
        maybe(mj, "feature_dim", m.spec.feature_dim);
        maybe(mj, "min_instances", m.spec.min_instances);
        maybe(mj, "max_instances", m.spec.max_instances);
        if (mj.contains("snr")) {
          if (mj.at("snr").is_string()) {
            if (mj.at("snr").get<std::string>() != "inf") {
              throw ConfigError("snr must be a number or \"inf\"");
            }
            m.spec.snr = std::numeric_limits<double>::infinity();
          } else {
            m.spec.snr = mj.at("snr").get<double>();
          }
        }
        maybe(mj, "encoder", m.encoder);
        maybe(mj, "snn_dims", m.snn_dims);
        maybe(mj, "snn_dropout", m.snn_dropout);
        maybe(mj, "abmil_embed_dim", m.abmil_embed_dim);
        maybe(mj, "abmil_attn_dim", m.abmil_attn_dim);
        maybe(mj, "abmil_attn_dropout", m.abmil_attn_dropout);
        cfg.dataset.modalities.push_back(std::move(m));
      }
    }
  }
  if (cfg.dataset.modalities.empty()) {
    // Default two-modality setup: one tabular, one bag.
    ModalityConfig tab;
    tab.spec.name = "tab";
    ModalityConfig bag;
    bag.spec.name = "bag";
    bag.spec.is_bag = true;
    cfg.dataset.modalities = {tab, bag};
  }

  maybe(j, "seeds", cfg.seeds);
  maybe(j, "output_dir", cfg.output_dir);
  if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty");

  cfg.block_config().validate();
  cfg.dataset.synthetic_spec().validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in '" + path.string() +
                      "': " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace mmlego
