#include "mmlego/legomerge.hpp"

#include <algorithm>
#include <cmath>

namespace mmlego {

void SlerpSpec::validate() const {
  if (alpha < 0.0 || alpha > 1.0) {
    throw ConfigError("slerp alpha must lie in [0, 1]");
  }
  if (eps <= 0.0) throw ConfigError("slerp eps must be positive");
}

std::vector<double> slerp(const std::vector<double>& w1,
                          const std::vector<double>& w2, double alpha,
                          double eps) {
  if (w1.size() != w2.size()) {
    throw LengthMismatchError("slerp: vector lengths disagree");
  }
  double n1 = 0.0, n2 = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < w1.size(); ++i) {
    n1 += w1[i] * w1[i];
    n2 += w2[i] * w2[i];
    dot += w1[i] * w2[i];
  }
  n1 = std::sqrt(n1);
  n2 = std::sqrt(n2);
  if (n1 == 0.0 || n2 == 0.0) {
    throw ZeroVectorError("slerp: zero-norm input vector");
  }
  const double cos_theta = std::clamp(dot / (n1 * n2), -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const double sin_theta = std::sin(theta);
  std::vector<double> out(w1.size());
  if (sin_theta < eps) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = (1.0 - alpha) * w1[i] + alpha * w2[i];
    }
    return out;
  }
  const double c1 = std::sin(theta * (1.0 - alpha)) / sin_theta;
  const double c2 = std::sin(theta * alpha) / sin_theta;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = c1 * w1[i] + c2 * w2[i];
  }
  return out;
}

LegoBlock clone_block(const LegoBlock& block) {
  LegoBlock out = block;
  auto deep = [](Tensor& t) {
    const bool rg = t.requires_grad();
    t = t.clone();
    t.set_requires_grad(rg);
  };
  for (SnnParams::Layer& layer : out.encoder.snn.layers) {
    deep(layer.weight);
    deep(layer.bias);
  }
  if (out.encoder.config.kind == EncoderKind::kAbmil) {
    deep(out.encoder.abmil.embed_weight);
    deep(out.encoder.abmil.embed_bias);
    deep(out.encoder.abmil.gate_v);
    deep(out.encoder.abmil.gate_u);
    deep(out.encoder.abmil.attn_w);
  }
  deep(out.latent_init);
  for (AttentionParams& ap : out.attn) {
    deep(ap.w_q);
    deep(ap.w_k);
    deep(ap.w_v);
  }
  deep(out.head.ln_gain);
  deep(out.head.ln_bias);
  deep(out.head.weight);
  deep(out.head.bias);
  return out;
}

namespace {

void check_compatible(const std::vector<LegoBlock>& blocks) {
  if (blocks.size() < 2) {
    throw EmptyInputError("merge_blocks: need at least two blocks");
  }
  const LegoBlock& first = blocks.front();
  for (const LegoBlock& b : blocks) {
    if (b.config.latent_channels != first.config.latent_channels ||
        b.config.latent_dim != first.config.latent_dim) {
      throw IncompatibleLatentShapeError(
          "merge: latent shapes disagree between blocks");
    }
    if (!b.task.compatible_with(first.task)) {
      throw IncompatibleTaskError("merge: task specs disagree between blocks");
    }
    if (b.head_input_dim() != first.head_input_dim()) {
      throw IncompatibleTaskError("merge: head input dims disagree");
    }
  }
}

std::vector<double> pack_head(const HeadParams& head, bool with_ln) {
  std::vector<double> out;
  out.insert(out.end(), head.weight.values().begin(),
             head.weight.values().end());
  out.insert(out.end(), head.bias.values().begin(), head.bias.values().end());
  if (with_ln) {
    out.insert(out.end(), head.ln_gain.values().begin(),
               head.ln_gain.values().end());
    out.insert(out.end(), head.ln_bias.values().begin(),
               head.ln_bias.values().end());
  }
  return out;
}

HeadParams unpack_head(const std::vector<double>& packed,
                       const HeadParams& reference, bool with_ln) {
  HeadParams out;
  std::size_t off = 0;
  auto take = [&](const Tensor& ref) {
    std::vector<double> v(packed.begin() + off,
                          packed.begin() + off + ref.numel());
    off += ref.numel();
    return Tensor::from_values(ref.shape(), std::move(v));
  };
  out.weight = take(reference.weight);
  out.bias = take(reference.bias);
  if (with_ln) {
    out.ln_gain = take(reference.ln_gain);
    out.ln_bias = take(reference.ln_bias);
  } else {
    out.ln_gain = reference.ln_gain.clone();
    out.ln_bias = reference.ln_bias.clone();
  }
  return out;
}

}  // namespace

HeadParams slerp_heads(const std::vector<const HeadParams*>& heads,
                       const SlerpSpec& spec, bool merge_layer_norm) {
  if (heads.empty()) throw EmptyInputError("slerp_heads: no heads");
  spec.validate();
  // Sequential pairwise interpolation in the given order.
  std::vector<double> packed = pack_head(*heads.front(), merge_layer_norm);
  for (std::size_t i = 1; i < heads.size(); ++i) {
    packed = slerp(packed, pack_head(*heads[i], merge_layer_norm), spec.alpha,
                   spec.eps);
  }
  return unpack_head(packed, *heads.front(), merge_layer_norm);
}

MergedModel merge_blocks(const std::vector<LegoBlock>& blocks,
                         const MergeConfig& config) {
  check_compatible(blocks);
  MergedModel model;
  model.config = config;
  std::vector<const HeadParams*> heads;
  for (const LegoBlock& b : blocks) {
    model.blocks.push_back(clone_block(b));
    model.modality_order.push_back(b.modality);
    heads.push_back(&b.head);
  }
  model.head = slerp_heads(heads, config.head_slerp, config.merge_layer_norm);
  return model;
}

namespace {

// Passes without the head: the block's final frequency-domain latent.
ComplexLatent block_final_latent(const LegoBlock& block,
                                 const ModalitySample& sample) {
  const BlockForward fwd = block_forward(block, sample);
  return ComplexLatent{fwd.freq_real, fwd.freq_imag};
}

}  // namespace

Tensor merged_forward(const MergedModel& model, const SampleSet& samples) {
  std::vector<ComplexLatent> latents;
  for (const LegoBlock& block : model.blocks) {
    auto it = samples.find(block.modality);
    if (it == samples.end()) continue;  // missing modalities are skipped
    latents.push_back(block_final_latent(block, it->second));
  }
  if (latents.empty()) {
    throw NoModalityAvailableError("merged_forward: no available modality");
  }
  const ComplexLatent merged =
      latents.size() == 1 ? latents.front()
                          : merge_latents(latents, model.config.phase_mode);
  return apply_head(model.head, merged.real, merged.imag,
                    model.block_config());
}

double evaluate_merged(const MergedModel& model,
                       const std::vector<SampleSet>& inputs,
                       const std::vector<LabeledSample>& labels) {
  if (inputs.size() != labels.size()) {
    throw LengthMismatchError("evaluate_merged: inputs/labels disagree");
  }
  std::vector<std::vector<double>> rows;
  rows.reserve(inputs.size());
  for (const SampleSet& s : inputs) {
    const Tensor logits = merged_forward(model, s);
    rows.emplace_back(logits.values().begin(), logits.values().end());
  }
  return evaluate_metric(model.task(), rows, labels);
}

}  // namespace mmlego
