#include <doctest.h>

#include <json.hpp>

#include "mmlego/config.hpp"

using namespace mmlego;

TEST_CASE("built-in defaults match the reference hyperparameters") {
  const RunConfig cfg = parse_run_config(nlohmann::json::object());
  CHECK(cfg.shared.lr == 0.003);
  CHECK(cfg.shared.epochs == 40);
  CHECK(cfg.shared.patience == 7);
  CHECK(cfg.shared.l1 == 0.0002);
  CHECK(cfg.shared.batch == 512);
  CHECK(cfg.shared.optimizer == "adam");
  CHECK(cfg.shared.scheduler == "plateau");

  CHECK(cfg.mm_lego.tune_epochs == 2);
  CHECK(cfg.mm_lego.fuse_method == "stack");
  CHECK(cfg.mm_lego.merge_method == "harmonic");
  CHECK(cfg.mm_lego.head_method == "slerp");
  CHECK(cfg.mm_lego.alpha == 0.5);
  CHECK(cfg.mm_lego.track_imaginary);
  CHECK(cfg.mm_lego.normalise);
  CHECK(cfg.mm_lego.latent_channels == 17);
  CHECK(cfg.mm_lego.latent_dim == 126);
  CHECK(cfg.mm_lego.depth == 4);
  CHECK(cfg.mm_lego.attn_dropout == 0.45);
  CHECK(cfg.mm_lego.fcnn_dropout == 0.36);

  const BlockConfig block = cfg.block_config();
  CHECK(block.latent_channels == 17);
  CHECK(block.latent_dim == 126);
  CHECK(block.resolved_heads() == 2);   // 126/64 rounded
  CHECK(block.resolved_qk_dim() == 64);

  // The default SNN stack is depth 4, width 256.
  REQUIRE(cfg.dataset.modalities.size() == 2);
  const EncoderConfig enc = cfg.encoder_config(cfg.dataset.modalities[0]);
  CHECK(enc.hidden_dims == std::vector<std::size_t>{256, 256, 256, 256});
  CHECK(enc.dropout == 0.25);
}

TEST_CASE("unknown keys are rejected everywhere") {
  CHECK_THROWS_AS(parse_run_config({{"sharedd", nlohmann::json::object()}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"shared", {{"learning_rate", 0.1}}}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"mm_lego", {{"latentdims", 8}}}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"dataset", {{"samples", 10}}}}),
                  ConfigError);
}

TEST_CASE("unsupported method names are rejected") {
  CHECK_THROWS_AS(parse_run_config({{"shared", {{"optimizer", "sgd"}}}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"mm_lego", {{"merge_method", "mean"}}}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"mm_lego", {{"fuse_method", "blend"}}}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"mm_lego", {{"head_method", "avg"}}}}),
                  ConfigError);
}

TEST_CASE("overrides flow through to derived configs") {
  nlohmann::json j;
  j["shared"] = {{"lr", 0.01}, {"batch", 64}};
  j["mm_lego"] = {{"latent_channels", 8},
                  {"latent_dim", 16},
                  {"depth", 2},
                  {"attn_dropout", 0.1},
                  {"phase_mode", "circular"},
                  {"alpha", 0.25}};
  j["dataset"] = {{"n_samples", 100},
                  {"seed", 9},
                  {"modalities",
                   nlohmann::json::array(
                       {{{"name", "t"}, {"kind", "tabular"}, {"feature_dim", 7},
                         {"snn_dims", {16, 16}}},
                        {{"name", "b"}, {"kind", "bag"}, {"feature_dim", 5},
                         {"snr", "inf"}}})}};
  j["seeds"] = {4, 5};
  const RunConfig cfg = parse_run_config(j);
  CHECK(cfg.train_settings(4).lr == 0.01);
  CHECK(cfg.train_settings(4).batch_size == 64);
  CHECK(cfg.block_config().latent_dim == 16);
  CHECK(cfg.merge_config().phase_mode == PhaseMode::kCircular);
  CHECK(cfg.merge_config().head_slerp.alpha == 0.25);
  CHECK(cfg.dataset.modalities[1].spec.is_bag);
  CHECK(std::isinf(cfg.dataset.modalities[1].spec.snr));
  const SyntheticSpec spec = cfg.dataset.synthetic_spec();
  CHECK(spec.n_samples == 100);
  CHECK(spec.seed == 9);
  CHECK(cfg.fine_tune_settings(4).epochs == 2);
}
