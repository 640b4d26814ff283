#include "mmlego/legoblock.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "mmlego/rng.hpp"

namespace mmlego {

std::size_t BlockConfig::resolved_heads() const {
  if (attn_heads != 0) return attn_heads;
  const std::size_t h = static_cast<std::size_t>(
      std::llround(static_cast<double>(latent_dim) / 64.0));
  return std::max<std::size_t>(1, h);
}

std::size_t BlockConfig::resolved_qk_dim() const {
  if (qk_head_dim != 0) return qk_head_dim;
  return std::min<std::size_t>(64, latent_dim);
}

void BlockConfig::validate() const {
  if (depth == 0) throw DepthZeroError("block depth must be at least 1");
  if (latent_channels == 0 || latent_dim == 0) {
    throw ConfigError("latent shape must be positive");
  }
  if (latent_dim % resolved_heads() != 0) {
    throw ConfigError("latent_dim (" + std::to_string(latent_dim) +
                      ") must be divisible by the head count (" +
                      std::to_string(resolved_heads()) + ")");
  }
  if (layer_norm_eps <= 0.0) throw ConfigError("layer_norm_eps must be positive");
}

const AttentionParams& LegoBlock::attn_for_pass(std::size_t pass) const {
  return config.share_attn_across_passes ? attn[0] : attn.at(pass);
}

std::size_t LegoBlock::head_input_dim() const {
  const std::size_t flat = config.latent_channels * config.latent_dim;
  return config.head_uses_imag ? 2 * flat : flat;
}

std::vector<Tensor> LegoBlock::parameters() {
  std::vector<Tensor> out = encoder.parameters();
  out.push_back(latent_init);
  for (AttentionParams& ap : attn) {
    out.push_back(ap.w_q);
    out.push_back(ap.w_k);
    out.push_back(ap.w_v);
  }
  out.push_back(head.ln_gain);
  out.push_back(head.ln_bias);
  out.push_back(head.weight);
  out.push_back(head.bias);
  return out;
}

void LegoBlock::set_requires_grad(bool enabled) {
  for (Tensor& p : parameters()) p.set_requires_grad(enabled);
}

LegoBlock make_block(const std::string& modality, const TaskSpec& task,
                     const BlockConfig& config,
                     const EncoderConfig& encoder_config,
                     std::uint64_t master_seed) {
  config.validate();
  task.validate();
  LegoBlock block;
  block.modality = modality;
  block.task = task;
  block.config = config;

  auto enc_rng = seeded_rng(master_seed, "encoder:" + modality);
  block.encoder = make_encoder_params(encoder_config, enc_rng);

  // The latent, attention and head streams are shared across modalities so
  // that blocks trained in isolation remain alignable for merging.
  auto latent_rng = seeded_rng(master_seed, "latent_init");
  block.latent_init = Tensor::randn(
      {config.latent_channels, config.latent_dim}, latent_rng, 0.02);
  block.latent_init.set_requires_grad(true);

  const std::size_t d = config.latent_dim;
  const std::size_t d_h = encoder_config.output_feature_dim();
  const std::size_t qk_total = config.resolved_heads() * config.resolved_qk_dim();
  auto attn_rng = seeded_rng(master_seed, "attn_init");
  const std::size_t n_sets = config.share_attn_across_passes ? 1 : config.depth;
  for (std::size_t s = 0; s < n_sets; ++s) {
    AttentionParams ap;
    ap.w_q = Tensor::randn({d, qk_total}, attn_rng,
                           1.0 / std::sqrt(static_cast<double>(d)));
    ap.w_k = Tensor::randn({d_h, qk_total}, attn_rng,
                           1.0 / std::sqrt(static_cast<double>(d_h)));
    ap.w_v = Tensor::randn({d_h, d}, attn_rng,
                           1.0 / std::sqrt(static_cast<double>(d_h)));
    ap.w_q.set_requires_grad(true);
    ap.w_k.set_requires_grad(true);
    ap.w_v.set_requires_grad(true);
    block.attn.push_back(std::move(ap));
  }

  const std::size_t flat = block.head_input_dim();
  const std::size_t out_dim = task.output_dim();
  auto head_rng = seeded_rng(master_seed, "head_init");
  block.head.ln_gain = Tensor::ones({flat});
  block.head.ln_bias = Tensor::zeros({flat});
  block.head.weight = Tensor::randn({flat, out_dim}, head_rng,
                                    1.0 / std::sqrt(static_cast<double>(flat)));
  block.head.bias = Tensor::zeros({out_dim});
  block.head.ln_gain.set_requires_grad(true);
  block.head.ln_bias.set_requires_grad(true);
  block.head.weight.set_requires_grad(true);
  block.head.bias.set_requires_grad(true);
  return block;
}

namespace {

// Multi-head scaled dot-product attention from the latent's real spectrum
// (queries) onto the encoder spectrum (keys/values). The value projection
// maps back to latent_dim so the output can replace the real spectrum.
Tensor cross_attention(const Tensor& query_spec, const Tensor& kv_spec,
                       const AttentionParams& ap, const BlockConfig& cfg,
                       const ForwardOptions& opt) {
  const std::size_t heads = cfg.resolved_heads();
  const std::size_t qk = cfg.resolved_qk_dim();
  const Tensor q = matmul(query_spec, ap.w_q);
  const Tensor k = matmul(kv_spec, ap.w_k);
  const Tensor v = matmul(kv_spec, ap.w_v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(qk));
  if (heads == 1) {
    Tensor weights = softmax(mul_scalar(matmul(q, transpose(k)), scale), -1);
    weights = dropout(weights, cfg.attn_dropout, opt.training, opt.rng);
    return matmul(weights, v);
  }
  const std::size_t v_dim = cfg.latent_dim / heads;
  std::vector<Tensor> pieces;
  pieces.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * qk, qk);
    const Tensor kh = slice_cols(k, h * qk, qk);
    const Tensor vh = slice_cols(v, h * v_dim, v_dim);
    Tensor weights = softmax(mul_scalar(matmul(qh, transpose(kh)), scale), -1);
    weights = dropout(weights, cfg.attn_dropout, opt.training, opt.rng);
    pieces.push_back(matmul(weights, vh));
  }
  return concat_cols(pieces);
}

}  // namespace

std::pair<Tensor, Tensor> update_spectrum(const Tensor& latent,
                                          const Tensor& kv_spec,
                                          const AttentionParams& attn,
                                          const BlockConfig& config,
                                          const ForwardOptions& opt) {
  auto [re, im] = dft2_parts(latent);
  const Tensor attn_out = cross_attention(re, kv_spec, attn, config, opt);
  Tensor new_re = config.residual ? add(re, attn_out) : attn_out;
  Tensor new_im = config.track_imaginary
                      ? im
                      : Tensor::zeros({config.latent_channels,
                                       config.latent_dim});
  return {std::move(new_re), std::move(new_im)};
}

Tensor block_update(const Tensor& latent, const Tensor& encoder_tokens,
                    const AttentionParams& attn, const BlockConfig& config,
                    const ForwardOptions& opt) {
  if (latent.rank() != 2 || latent.shape()[0] != config.latent_channels ||
      latent.shape()[1] != config.latent_dim) {
    throw ShapeMismatchError("block_update: latent shape mismatch");
  }
  const Tensor kv_spec = dft_real_component(encoder_tokens);
  auto [re, im] = update_spectrum(latent, kv_spec, attn, config, opt);
  return idft2_real(re, im);
}

BlockForward block_forward(const LegoBlock& block,
                           const ModalitySample& sample,
                           const ForwardOptions& opt) {
  block.config.validate();
  const Tensor tokens = encode(sample, block.encoder, opt);
  // The encoder output does not change between passes, so its spectrum is
  // computed once.
  const Tensor kv_spec = dft_real_component(tokens);
  Tensor latent = block.latent_init;
  BlockForward result;
  for (std::size_t pass = 0; pass < block.config.depth; ++pass) {
    auto [re, im] = update_spectrum(latent, kv_spec,
                                    block.attn_for_pass(pass), block.config,
                                    opt);
    if (pass + 1 < block.config.depth) {
      latent = idft2_real(re, im);
    } else {
      // The inverse transform is omitted after the last update; the head
      // reads the frequency-domain state directly.
      result.freq_real = re;
      result.freq_imag = im;
    }
  }
  result.logits = apply_head(block.head, result.freq_real, result.freq_imag,
                             block.config, opt);
  return result;
}

Tensor apply_head(const HeadParams& head, const Tensor& freq_real,
                  const Tensor& freq_imag, const BlockConfig& config,
                  const ForwardOptions& opt) {
  Tensor flat = reshape(freq_real, {1, freq_real.numel()});
  if (config.head_uses_imag) {
    flat = concat_cols({flat, reshape(freq_imag, {1, freq_imag.numel()})});
  }
  Tensor h = layer_norm(flat, head.ln_gain, head.ln_bias, config.layer_norm_eps);
  h = dropout(h, config.fcnn_dropout, opt.training, opt.rng);
  return add(matmul(h, head.weight), head.bias);
}

// ------------------------------------------------------------- training

std::vector<SurvivalLabel> survival_labels(
    const TaskSpec& task, const std::vector<LabeledSample>& samples) {
  if (task.bin_edges.size() + 1 != task.n_bins) {
    throw InvalidBinError("survival_labels: bin edges not fitted");
  }
  std::vector<SurvivalLabel> out;
  out.reserve(samples.size());
  for (const LabeledSample& s : samples) {
    SurvivalLabel lbl;
    lbl.time = s.value;
    lbl.censored = s.censored;
    lbl.bin = assign_survival_bin(s.value, task.bin_edges);
    out.push_back(lbl);
  }
  return out;
}

double evaluate_metric(const TaskSpec& task,
                       const std::vector<std::vector<double>>& logits,
                       const std::vector<LabeledSample>& samples) {
  if (logits.size() != samples.size()) {
    throw LengthMismatchError("evaluate_metric: logits/samples disagree");
  }
  switch (task.kind) {
    case TaskKind::kBinary: {
      std::vector<double> scores(samples.size());
      std::vector<bool> labels(samples.size());
      for (std::size_t i = 0; i < samples.size(); ++i) {
        scores[i] = logits[i][1] - logits[i][0];
        labels[i] = samples[i].value != 0.0;
      }
      return auc(scores, labels);
    }
    case TaskKind::kMulticlass: {
      std::vector<std::size_t> labels(samples.size());
      for (std::size_t i = 0; i < samples.size(); ++i) {
        labels[i] = static_cast<std::size_t>(samples[i].value);
      }
      return macro_auc(logits, labels);
    }
    case TaskKind::kSurvival: {
      std::vector<double> risks(samples.size()), times(samples.size());
      std::vector<bool> censored(samples.size());
      for (std::size_t i = 0; i < samples.size(); ++i) {
        risks[i] = survival_risk_score(logits[i]);
        times[i] = samples[i].value;
        censored[i] = samples[i].censored;
      }
      return concordance_index(risks, times, censored);
    }
  }
  throw ConfigError("evaluate_metric: unknown task kind");
}

Tensor task_loss(const TaskSpec& task, const Tensor& logits,
                 const std::vector<LabeledSample>& samples) {
  if (task.kind == TaskKind::kSurvival) {
    return nll_survival_loss(logits, survival_labels(task, samples));
  }
  std::vector<std::size_t> labels(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    labels[i] = static_cast<std::size_t>(samples[i].value);
  }
  return cross_entropy_loss(logits, labels);
}

namespace {

std::vector<std::vector<double>> snapshot_params(std::vector<Tensor> params) {
  std::vector<std::vector<double>> snap;
  snap.reserve(params.size());
  for (const Tensor& p : params) {
    snap.emplace_back(p.values().begin(), p.values().end());
  }
  return snap;
}

void restore_params(std::vector<Tensor> params,
                    const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_values();
    std::copy(snap[i].begin(), snap[i].end(), w.begin());
  }
}

struct ValResult {
  double loss = 0.0;
  double metric = 0.0;
};

ValResult validate_block(const LegoBlock& block,
                         const std::vector<LabeledSample>& val) {
  std::vector<std::vector<double>> rows;
  std::vector<Tensor> logit_tensors;
  rows.reserve(val.size());
  for (const LabeledSample& s : val) {
    const BlockForward fwd = block_forward(block, s.features);
    rows.emplace_back(fwd.logits.values().begin(), fwd.logits.values().end());
    logit_tensors.push_back(fwd.logits);
  }
  ValResult res;
  res.loss = task_loss(block.task, concat_rows(logit_tensors), val).item();
  res.metric = evaluate_metric(block.task, rows, val);
  return res;
}

}  // namespace

TrainReport train_block(LegoBlock& block,
                        const std::vector<LabeledSample>& train,
                        const std::vector<LabeledSample>& val,
                        const TrainSettings& settings) {
  block.config.validate();
  block.task.validate();
  if (train.empty()) throw EmptyInputError("train_block: no training samples");
  if (val.empty()) throw EmptyInputError("train_block: no validation samples");

  if (block.task.kind == TaskKind::kSurvival && block.task.bin_edges.empty()) {
    std::vector<double> times;
    std::vector<bool> censored;
    for (const LabeledSample& s : train) {
      times.push_back(s.value);
      censored.push_back(s.censored);
    }
    block.task.bin_edges = fit_survival_bins(times, censored, block.task.n_bins);
  }
  if (block.encoder.config.normalise && !block.encoder.standardizer.fitted()) {
    std::vector<const ModalitySample*> feats;
    feats.reserve(train.size());
    for (const LabeledSample& s : train) feats.push_back(&s.features);
    block.encoder.standardizer.fit(feats, block.encoder.config.input_dim);
  }

  std::vector<ParamGroup> groups(2);
  for (Tensor& p : block.parameters()) {
    if (p.node() == block.head.weight.node()) continue;
    groups[0].params.push_back(p);
  }
  groups[1].params.push_back(block.head.weight);
  groups[1].l1 = settings.l1;

  AdamOptimizer opt(groups, settings.lr);
  PlateauScheduler scheduler(opt, settings.scheduler_factor,
                             settings.scheduler_patience);
  EarlyStopper stopper(settings.patience);

  auto shuffle_rng = seeded_rng(settings.seed, "shuffle:" + block.modality);
  auto dropout_rng = seeded_rng(settings.seed, "dropout:" + block.modality);
  const std::size_t batch_size =
      std::max<std::size_t>(1, std::min(settings.batch_size, train.size()));

  TrainReport report;
  auto best_snapshot = snapshot_params(block.parameters());
  double best_val_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> index(train.size());
  std::iota(index.begin(), index.end(), 0);
  double total_epoch_seconds = 0.0;

  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(index.begin(), index.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    bool diverged = false;
    try {
      for (std::size_t start = 0; start < index.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, index.size());
        GradientTape tape;
        std::vector<Tensor> logit_rows;
        std::vector<LabeledSample> batch;
        logit_rows.reserve(end - start);
        batch.reserve(end - start);
        ForwardOptions fwd_opt{true, &dropout_rng};
        for (std::size_t i = start; i < end; ++i) {
          const LabeledSample& s = train[index[i]];
          logit_rows.push_back(block_forward(block, s.features, fwd_opt).logits);
          batch.push_back(s);
        }
        const Tensor loss =
            task_loss(block.task, concat_rows(logit_rows), batch);
        if (!std::isfinite(loss.item())) {
          diverged = true;
          break;
        }
        tape.backward(loss);
        opt.step();
        opt.zero_grad();
        epoch_loss += loss.item();
        ++n_batches;
      }
    } catch (const NumericError&) {
      diverged = true;
    }
    if (diverged) {
      restore_params(block.parameters(), best_snapshot);
      report.diverged = true;
      break;
    }

    const ValResult vr = validate_block(block, val);
    const auto t1 = std::chrono::steady_clock::now();
    total_epoch_seconds += std::chrono::duration<double>(t1 - t0).count();

    EpochStats stats;
    stats.train_loss = n_batches > 0 ? epoch_loss / static_cast<double>(n_batches)
                                     : 0.0;
    stats.val_loss = vr.loss;
    stats.val_metric = vr.metric;
    stats.lr = opt.lr();
    report.history.push_back(stats);
    report.epochs_run = epoch + 1;

    scheduler.observe(vr.loss);
    if (stopper.observe(vr.loss)) {
      best_snapshot = snapshot_params(block.parameters());
      best_val_loss = vr.loss;
    }
    if (stopper.should_stop()) {
      report.early_stopped = true;
      break;
    }
  }

  restore_params(block.parameters(), best_snapshot);
  report.best_val_loss = best_val_loss;
  if (!val.empty() && !report.history.empty()) {
    report.final_val_metric = validate_block(block, val).metric;
  }
  if (report.epochs_run > 0) {
    report.seconds_per_epoch =
        total_epoch_seconds / static_cast<double>(report.epochs_run);
  }
  return report;
}

}  // namespace mmlego
