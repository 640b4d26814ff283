#include "mmlego/legofuse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmlego/rng.hpp"

namespace mmlego {

FuseMethod fuse_method_from_string(const std::string& s) {
  if (s == "stack") return FuseMethod::kStack;
  if (s == "weave") return FuseMethod::kWeave;
  throw ConfigError("unknown fuse method '" + s + "'");
}

std::string to_string(FuseMethod method) {
  return method == FuseMethod::kStack ? "stack" : "weave";
}

std::vector<Tensor> FusedModel::parameters() {
  std::vector<Tensor> out;
  for (LegoBlock& b : blocks) {
    for (Tensor& p : b.encoder.parameters()) out.push_back(p);
    for (AttentionParams& ap : b.attn) {
      out.push_back(ap.w_q);
      out.push_back(ap.w_k);
      out.push_back(ap.w_v);
    }
  }
  out.push_back(latent_init);
  out.push_back(head.ln_gain);
  out.push_back(head.ln_bias);
  out.push_back(head.weight);
  out.push_back(head.bias);
  return out;
}

FusedModel build_fused(const std::vector<LegoBlock>& blocks, FuseMethod method,
                       FusedLatentInit latent_init, const SlerpSpec& head_slerp) {
  if (blocks.empty()) throw EmptyInputError("build_fused: no blocks");
  const LegoBlock& first = blocks.front();
  for (const LegoBlock& b : blocks) {
    if (b.config.latent_channels != first.config.latent_channels ||
        b.config.latent_dim != first.config.latent_dim) {
      throw IncompatibleLatentShapeError("fuse: latent shapes disagree");
    }
    if (!b.task.compatible_with(first.task)) {
      throw IncompatibleTaskError("fuse: task specs disagree");
    }
    if (b.head_input_dim() != first.head_input_dim()) {
      throw IncompatibleTaskError("fuse: head input dims disagree");
    }
  }

  FusedModel model;
  model.method = method;
  for (const LegoBlock& b : blocks) model.blocks.push_back(clone_block(b));

  if (method == FuseMethod::kStack) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (std::size_t p = 0; p < blocks[b].config.depth; ++p) {
        model.schedule.push_back({b, p});
      }
    }
  } else {
    std::size_t max_depth = 0;
    for (const LegoBlock& b : blocks) {
      max_depth = std::max(max_depth, b.config.depth);
    }
    for (std::size_t p = 0; p < max_depth; ++p) {
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (p < blocks[b].config.depth) model.schedule.push_back({b, p});
      }
    }
  }

  if (blocks.size() == 1) {
    // Degenerate fuse reproduces the block exactly, so no merge round trip.
    model.latent_init = blocks.front().latent_init.clone();
    model.head = slerp_heads({&blocks.front().head}, head_slerp, true);
  } else {
    if (latent_init == FusedLatentInit::kFirstBlock) {
      model.latent_init = blocks.front().latent_init.clone();
    } else {
      std::vector<ComplexLatent> spectra;
      for (const LegoBlock& b : blocks) spectra.push_back(dft2(b.latent_init));
      model.latent_init = inverse_dft2(merge_latents(spectra));
    }
    std::vector<const HeadParams*> heads;
    for (const LegoBlock& b : blocks) heads.push_back(&b.head);
    model.head = slerp_heads(heads, head_slerp, true);
  }
  model.latent_init.set_requires_grad(true);
  model.head.ln_gain.set_requires_grad(true);
  model.head.ln_bias.set_requires_grad(true);
  model.head.weight.set_requires_grad(true);
  model.head.bias.set_requires_grad(true);
  return model;
}

Tensor fused_forward(const FusedModel& model, const SampleSet& samples,
                     const ForwardOptions& opt) {
  const BlockConfig& cfg = model.block_config();
  // Encode each available modality once; the same tokens feed every
  // scheduled pass of that block.
  std::vector<Tensor> kv_specs(model.blocks.size());
  std::vector<bool> active(model.blocks.size(), false);
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    auto it = samples.find(model.blocks[b].modality);
    if (it == samples.end()) continue;
    active[b] = true;
    kv_specs[b] = dft_real_component(encode(it->second, model.blocks[b].encoder, opt));
  }
  std::size_t last_active = model.schedule.size();
  for (std::size_t i = 0; i < model.schedule.size(); ++i) {
    if (active[model.schedule[i].block_index]) last_active = i;
  }
  if (last_active == model.schedule.size()) {
    throw NoModalityAvailableError("fused_forward: no available modality");
  }

  Tensor latent = model.latent_init;
  Tensor freq_real, freq_imag;
  for (std::size_t i = 0; i <= last_active; ++i) {
    const FuseLayer& layer = model.schedule[i];
    if (!active[layer.block_index]) continue;
    const LegoBlock& owner = model.blocks[layer.block_index];
    auto [re, im] = update_spectrum(latent, kv_specs[layer.block_index],
                                    owner.attn_for_pass(layer.pass_index),
                                    cfg, opt);
    if (i < last_active) {
      latent = idft2_real(re, im);
    } else {
      freq_real = re;
      freq_imag = im;
    }
  }
  return apply_head(model.head, freq_real, freq_imag, cfg, opt);
}

namespace {

std::vector<LabeledSample> as_labels(const std::vector<MultimodalExample>& xs) {
  std::vector<LabeledSample> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i].value = xs[i].value;
    out[i].censored = xs[i].censored;
  }
  return out;
}

}  // namespace

double evaluate_fused(const FusedModel& model,
                      const std::vector<MultimodalExample>& examples) {
  std::vector<std::vector<double>> rows;
  rows.reserve(examples.size());
  for (const MultimodalExample& x : examples) {
    const Tensor logits = fused_forward(model, x.inputs);
    rows.emplace_back(logits.values().begin(), logits.values().end());
  }
  return evaluate_metric(model.task(), rows, as_labels(examples));
}

FineTuneReport fine_tune(FusedModel& model,
                         const std::vector<MultimodalExample>& train,
                         const std::vector<MultimodalExample>& val,
                         const FineTuneSettings& settings) {
  if (train.empty()) throw EmptyInputError("fine_tune: no training samples");
  for (const MultimodalExample& x : train) {
    for (const LegoBlock& b : model.blocks) {
      if (x.inputs.find(b.modality) == x.inputs.end()) {
        throw ConfigError("fine_tune: training sample missing modality '" +
                          b.modality + "'");
      }
    }
  }

  FineTuneReport report;
  report.pre_metric = val.empty() ? 0.0 : evaluate_fused(model, val);
  if (settings.epochs == 0) {
    report.post_metric = report.pre_metric;
    return report;
  }

  std::vector<ParamGroup> groups(2);
  for (Tensor& p : model.parameters()) {
    if (p.node() == model.head.weight.node()) continue;
    groups[0].params.push_back(p);
  }
  groups[1].params.push_back(model.head.weight);
  groups[1].l1 = settings.l1;
  AdamOptimizer opt(groups, settings.lr);

  auto initial_snapshot = [&] {
    std::vector<std::vector<double>> snap;
    for (const Tensor& p : model.parameters()) {
      snap.emplace_back(p.values().begin(), p.values().end());
    }
    return snap;
  }();

  auto shuffle_rng = seeded_rng(settings.seed, "fuse_shuffle");
  auto dropout_rng = seeded_rng(settings.seed, "fuse_dropout");
  const std::size_t batch_size =
      std::max<std::size_t>(1, std::min(settings.batch_size, train.size()));
  std::vector<std::size_t> index(train.size());
  std::iota(index.begin(), index.end(), 0);
  const std::vector<LabeledSample> train_labels = as_labels(train);

  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    std::shuffle(index.begin(), index.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    bool diverged = false;
    try {
      for (std::size_t start = 0; start < index.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, index.size());
        GradientTape tape;
        std::vector<Tensor> logit_rows;
        std::vector<LabeledSample> batch_labels;
        ForwardOptions fwd_opt{true, &dropout_rng};
        for (std::size_t i = start; i < end; ++i) {
          logit_rows.push_back(
              fused_forward(model, train[index[i]].inputs, fwd_opt));
          batch_labels.push_back(train_labels[index[i]]);
        }
        const Tensor loss =
            task_loss(model.task(), concat_rows(logit_rows), batch_labels);
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
      auto params = model.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].mutable_values();
        std::copy(initial_snapshot[i].begin(), initial_snapshot[i].end(),
                  w.begin());
      }
      throw DivergedLossError("fine_tune: loss diverged; parameters restored");
    }
    report.epoch_loss.push_back(
        n_batches > 0 ? epoch_loss / static_cast<double>(n_batches) : 0.0);
  }

  report.post_metric = val.empty() ? 0.0 : evaluate_fused(model, val);
  return report;
}

}  // namespace mmlego
