#include "mmlego/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmlego {

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "snn") return EncoderKind::kSnn;
  if (s == "abmil") return EncoderKind::kAbmil;
  if (s == "identity") return EncoderKind::kIdentity;
  throw ConfigError("unknown encoder kind '" + s + "'");
}

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kSnn: return "snn";
    case EncoderKind::kAbmil: return "abmil";
    case EncoderKind::kIdentity: return "identity";
  }
  return "?";
}

std::size_t EncoderConfig::output_feature_dim() const {
  switch (kind) {
    case EncoderKind::kSnn:
      return hidden_dims.empty() ? input_dim : hidden_dims.back();
    case EncoderKind::kAbmil:
      return abmil_embed_dim;
    case EncoderKind::kIdentity:
      return input_dim;
  }
  return 0;
}

void EncoderConfig::validate() const {
  if (input_dim == 0) throw ConfigError("encoder input_dim must be positive");
  if (kind == EncoderKind::kSnn && hidden_dims.empty()) {
    throw ConfigError("snn encoder needs at least one hidden layer");
  }
  if (kind == EncoderKind::kAbmil &&
      (abmil_embed_dim == 0 || abmil_attn_dim == 0)) {
    throw ConfigError("abmil dimensions must be positive");
  }
}

void Standardizer::fit(const std::vector<const ModalitySample*>& samples,
                       std::size_t feature_dim) {
  mean.assign(feature_dim, 0.0);
  stddev.assign(feature_dim, 1.0);
  std::size_t rows = 0;
  for (const ModalitySample* s : samples) {
    const auto v = s->features.values();
    const std::size_t n = v.size() / feature_dim;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < feature_dim; ++j)
        mean[j] += v[r * feature_dim + j];
    rows += n;
  }
  if (rows == 0) throw EmptyInputError("Standardizer: no samples to fit");
  for (double& m : mean) m /= static_cast<double>(rows);
  std::vector<double> var(feature_dim, 0.0);
  for (const ModalitySample* s : samples) {
    const auto v = s->features.values();
    const std::size_t n = v.size() / feature_dim;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < feature_dim; ++j) {
        const double d = v[r * feature_dim + j] - mean[j];
        var[j] += d * d;
      }
  }
  for (std::size_t j = 0; j < feature_dim; ++j) {
    stddev[j] = std::max(std::sqrt(var[j] / static_cast<double>(rows)), 1e-8);
  }
}

Tensor Standardizer::apply(const Tensor& x) const {
  if (!fitted()) return x;
  const std::size_t d = mean.size();
  if (x.numel() % d != 0) {
    throw ShapeMismatchError("Standardizer: feature dim mismatch");
  }
  std::vector<double> out(x.numel());
  const auto v = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (v[i] - mean[i % d]) / stddev[i % d];
  }
  return Tensor::from_values(x.shape(), std::move(out));
}

std::vector<Tensor> EncoderParams::parameters() {
  std::vector<Tensor> out;
  switch (config.kind) {
    case EncoderKind::kSnn:
      for (SnnParams::Layer& layer : snn.layers) {
        out.push_back(layer.weight);
        out.push_back(layer.bias);
      }
      break;
    case EncoderKind::kAbmil:
      out.push_back(abmil.embed_weight);
      out.push_back(abmil.embed_bias);
      out.push_back(abmil.gate_v);
      out.push_back(abmil.gate_u);
      out.push_back(abmil.attn_w);
      break;
    case EncoderKind::kIdentity:
      break;
  }
  return out;
}

EncoderParams make_encoder_params(const EncoderConfig& config,
                                  std::mt19937_64& rng) {
  config.validate();
  EncoderParams params;
  params.config = config;
  auto lecun = [&rng](std::size_t fan_in, const Shape& shape) {
    Tensor t = Tensor::randn(shape, rng,
                             1.0 / std::sqrt(static_cast<double>(fan_in)));
    t.set_requires_grad(true);
    return t;
  };
  switch (config.kind) {
    case EncoderKind::kSnn: {
      std::size_t in = config.input_dim;
      for (std::size_t width : config.hidden_dims) {
        SnnParams::Layer layer;
        layer.weight = lecun(in, {in, width});
        layer.bias = Tensor::zeros({width});
        layer.bias.set_requires_grad(true);
        params.snn.layers.push_back(std::move(layer));
        in = width;
      }
      break;
    }
    case EncoderKind::kAbmil: {
      params.abmil.embed_weight =
          lecun(config.input_dim, {config.input_dim, config.abmil_embed_dim});
      params.abmil.embed_bias = Tensor::zeros({config.abmil_embed_dim});
      params.abmil.embed_bias.set_requires_grad(true);
      params.abmil.gate_v = lecun(config.abmil_embed_dim,
                                  {config.abmil_embed_dim,
                                   config.abmil_attn_dim});
      params.abmil.gate_u = lecun(config.abmil_embed_dim,
                                  {config.abmil_embed_dim,
                                   config.abmil_attn_dim});
      params.abmil.attn_w = lecun(config.abmil_attn_dim,
                                  {config.abmil_attn_dim, 1});
      break;
    }
    case EncoderKind::kIdentity:
      break;
  }
  return params;
}

Tensor snn_forward(const Tensor& x, const EncoderParams& params,
                   const ForwardOptions& opt) {
  const EncoderConfig& cfg = params.config;
  Tensor h = x.rank() == 1 ? reshape(x, {1, x.numel()}) : x;
  if (h.cols() != cfg.input_dim) {
    throw ShapeMismatchError("snn_forward: expected input dim " +
                             std::to_string(cfg.input_dim));
  }
  for (const SnnParams::Layer& layer : params.snn.layers) {
    h = selu(add(matmul(h, layer.weight), layer.bias));
    h = alpha_dropout(h, cfg.dropout, opt.training, opt.rng);
  }
  return h;
}

namespace {

// Indices that sort the bag rows lexicographically by content. Reductions
// then run in an order independent of how the caller arranged the bag.
std::vector<std::size_t> canonical_bag_order(const Tensor& bag) {
  const std::size_t n = bag.rows(), d = bag.cols();
  const auto v = bag.values();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double* ra = v.data() + a * d;
    const double* rb = v.data() + b * d;
    return std::lexicographical_compare(ra, ra + d, rb, rb + d);
  });
  return order;
}

}  // namespace

AbmilOutput abmil_forward(const Tensor& bag, const EncoderParams& params,
                          const ForwardOptions& opt) {
  const EncoderConfig& cfg = params.config;
  if (bag.rank() != 2) {
    throw ShapeMismatchError("abmil_forward: bag must be (instances x features)");
  }
  if (bag.rows() == 0) throw EmptyBagError("abmil_forward: empty bag");
  if (bag.cols() != cfg.input_dim) {
    throw ShapeMismatchError("abmil_forward: expected feature dim " +
                             std::to_string(cfg.input_dim));
  }
  const std::size_t n = bag.rows(), d = bag.cols();
  const std::vector<std::size_t> order = canonical_bag_order(bag);
  std::vector<double> sorted(n * d);
  const auto bv = bag.values();
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(bv.begin() + order[r] * d, bv.begin() + (order[r] + 1) * d,
              sorted.begin() + r * d);
  }
  const Tensor x = Tensor::from_values({n, d}, std::move(sorted));

  const Tensor proj =
      add(matmul(x, params.abmil.embed_weight), params.abmil.embed_bias);
  const Tensor gate = mul(tanh(matmul(proj, params.abmil.gate_v)),
                          sigmoid(matmul(proj, params.abmil.gate_u)));
  Tensor scores = matmul(gate, params.abmil.attn_w);  // n x 1
  Tensor weights = softmax(transpose(scores), -1);    // 1 x n
  const std::vector<double> clean_weights(weights.values().begin(),
                                          weights.values().end());
  weights = dropout(weights, cfg.abmil_attn_dropout, opt.training, opt.rng);
  const Tensor pooled = matmul(weights, proj);  // 1 x embed

  AbmilOutput out;
  out.tokens = cfg.abmil_instance_tokens
                   ? concat_rows({pooled, proj})
                   : pooled;
  out.attention_weights.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    out.attention_weights[order[r]] = clean_weights[r];
  }
  return out;
}

Tensor encode(const ModalitySample& sample, const EncoderParams& params,
              const ForwardOptions& opt) {
  const Tensor x = params.standardizer.apply(sample.features);
  switch (params.config.kind) {
    case EncoderKind::kSnn:
      return snn_forward(x, params, opt);
    case EncoderKind::kAbmil:
      return abmil_forward(x, params, opt).tokens;
    case EncoderKind::kIdentity:
      return x.rank() == 1 ? reshape(x, {1, x.numel()}) : x;
  }
  throw ConfigError("encode: unknown encoder kind");
}

}  // namespace mmlego
