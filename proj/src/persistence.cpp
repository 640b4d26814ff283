#include "mmlego/persistence.hpp"

#include <cmath>
#include <fstream>

#include "mmlego/io.hpp"
#include "mmlego/rng.hpp"

namespace mmlego {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'L', 'K'};
constexpr std::uint16_t kVersion = 1;

using nlohmann::json;

// ---- config <-> json ----

json task_to_json(const TaskSpec& task) {
  json j;
  j["kind"] = to_string(task.kind);
  j["n_bins"] = task.n_bins;
  j["n_classes"] = task.n_classes;
  j["bin_edges"] = task.bin_edges;
  return j;
}

TaskSpec task_from_json(const json& j) {
  TaskSpec task;
  task.kind = task_kind_from_string(j.at("kind").get<std::string>());
  task.n_bins = j.at("n_bins").get<std::size_t>();
  task.n_classes = j.at("n_classes").get<std::size_t>();
  task.bin_edges = j.at("bin_edges").get<std::vector<double>>();
  return task;
}

json block_config_to_json(const BlockConfig& c) {
  json j;
  j["latent_channels"] = c.latent_channels;
  j["latent_dim"] = c.latent_dim;
  j["depth"] = c.depth;
  j["residual"] = c.residual;
  j["share_attn_across_passes"] = c.share_attn_across_passes;
  j["attn_heads"] = c.attn_heads;
  j["qk_head_dim"] = c.qk_head_dim;
  j["attn_dropout"] = c.attn_dropout;
  j["fcnn_dropout"] = c.fcnn_dropout;
  j["track_imaginary"] = c.track_imaginary;
  j["head_uses_imag"] = c.head_uses_imag;
  j["layer_norm_eps"] = c.layer_norm_eps;
  return j;
}

BlockConfig block_config_from_json(const json& j) {
  BlockConfig c;
  c.latent_channels = j.at("latent_channels").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.depth = j.at("depth").get<std::size_t>();
  c.residual = j.at("residual").get<bool>();
  c.share_attn_across_passes = j.at("share_attn_across_passes").get<bool>();
  c.attn_heads = j.at("attn_heads").get<std::size_t>();
  c.qk_head_dim = j.at("qk_head_dim").get<std::size_t>();
  c.attn_dropout = j.at("attn_dropout").get<double>();
  c.fcnn_dropout = j.at("fcnn_dropout").get<double>();
  c.track_imaginary = j.at("track_imaginary").get<bool>();
  c.head_uses_imag = j.at("head_uses_imag").get<bool>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  return c;
}

json encoder_config_to_json(const EncoderConfig& c) {
  json j;
  j["kind"] = to_string(c.kind);
  j["input_dim"] = c.input_dim;
  j["hidden_dims"] = c.hidden_dims;
  j["dropout"] = c.dropout;
  j["abmil_embed_dim"] = c.abmil_embed_dim;
  j["abmil_attn_dim"] = c.abmil_attn_dim;
  j["abmil_attn_dropout"] = c.abmil_attn_dropout;
  j["abmil_instance_tokens"] = c.abmil_instance_tokens;
  j["normalise"] = c.normalise;
  return j;
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.dropout = j.at("dropout").get<double>();
  c.abmil_embed_dim = j.at("abmil_embed_dim").get<std::size_t>();
  c.abmil_attn_dim = j.at("abmil_attn_dim").get<std::size_t>();
  c.abmil_attn_dropout = j.at("abmil_attn_dropout").get<double>();
  c.abmil_instance_tokens = j.at("abmil_instance_tokens").get<bool>();
  c.normalise = j.at("normalise").get<bool>();
  return c;
}

json standardizer_to_json(const Standardizer& s) {
  json j;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  return j;
}

Standardizer standardizer_from_json(const json& j) {
  Standardizer s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  return s;
}

// ---- tensor payload ----

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void collect_block_tensors(const std::string& prefix, const LegoBlock& block,
                           std::vector<NamedTensor>& out) {
  for (std::size_t i = 0; i < block.encoder.snn.layers.size(); ++i) {
    out.push_back({prefix + "encoder.snn." + std::to_string(i) + ".weight",
                   block.encoder.snn.layers[i].weight});
    out.push_back({prefix + "encoder.snn." + std::to_string(i) + ".bias",
                   block.encoder.snn.layers[i].bias});
  }
  if (block.encoder.config.kind == EncoderKind::kAbmil) {
    out.push_back({prefix + "encoder.abmil.embed_weight",
                   block.encoder.abmil.embed_weight});
    out.push_back({prefix + "encoder.abmil.embed_bias",
                   block.encoder.abmil.embed_bias});
    out.push_back({prefix + "encoder.abmil.gate_v", block.encoder.abmil.gate_v});
    out.push_back({prefix + "encoder.abmil.gate_u", block.encoder.abmil.gate_u});
    out.push_back({prefix + "encoder.abmil.attn_w", block.encoder.abmil.attn_w});
  }
  out.push_back({prefix + "latent_init", block.latent_init});
  for (std::size_t i = 0; i < block.attn.size(); ++i) {
    const std::string base = prefix + "attn." + std::to_string(i) + ".";
    out.push_back({base + "w_q", block.attn[i].w_q});
    out.push_back({base + "w_k", block.attn[i].w_k});
    out.push_back({base + "w_v", block.attn[i].w_v});
  }
  out.push_back({prefix + "head.ln_gain", block.head.ln_gain});
  out.push_back({prefix + "head.ln_bias", block.head.ln_bias});
  out.push_back({prefix + "head.weight", block.head.weight});
  out.push_back({prefix + "head.bias", block.head.bias});
}

void collect_head_tensors(const std::string& prefix, const HeadParams& head,
                          std::vector<NamedTensor>& out) {
  out.push_back({prefix + "ln_gain", head.ln_gain});
  out.push_back({prefix + "ln_bias", head.ln_bias});
  out.push_back({prefix + "weight", head.weight});
  out.push_back({prefix + "bias", head.bias});
}

std::vector<unsigned char> tensor_bytes(const Tensor& t) {
  std::vector<unsigned char> out;
  out.reserve(t.numel() * 8);
  for (double v : t.values()) io::append_f64(out, v);
  return out;
}

void write_container(const std::filesystem::path& path,
                     json manifest,
                     const std::vector<NamedTensor>& tensors) {
  std::vector<unsigned char> payload;
  json tensor_list = json::array();
  for (const NamedTensor& nt : tensors) {
    const std::vector<unsigned char> bytes = tensor_bytes(nt.tensor);
    json tj;
    tj["name"] = nt.name;
    tj["shape"] = nt.tensor.shape();
    tj["offset"] = payload.size();
    tj["bytes"] = bytes.size();
    tj["checksum"] = fnv1a64(bytes.data(), bytes.size());
    tensor_list.push_back(tj);
    payload.insert(payload.end(), bytes.begin(), bytes.end());
  }
  manifest["tensors"] = std::move(tensor_list);
  manifest["format"] = kVersion;
  manifest["writer"] = "mmlego";

  const std::string manifest_text = manifest.dump();
  std::vector<unsigned char> file;
  io::append_bytes(file, kMagic, 4);
  io::append_u16(file, kVersion);
  io::append_u64(file, manifest_text.size());
  io::append_u64(file, fnv1a64(manifest_text.data(), manifest_text.size()));
  io::append_bytes(file, manifest_text.data(), manifest_text.size());
  file.insert(file.end(), payload.begin(), payload.end());
  io::write_file_atomic(path, file);
}

struct Container {
  json manifest;
  std::vector<unsigned char> payload;
};

json parse_manifest_bytes(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ManifestInconsistentError(std::string("manifest parse error: ") +
                                    e.what());
  }
}

// Reads and verifies header + manifest; `with_payload` controls whether the
// payload is materialized and checksummed.
Container read_container(const std::filesystem::path& path,
                         bool with_payload) {
  io::ByteReader reader(io::read_file(path));
  if (reader.read_bytes(4, "magic") != std::string(kMagic, 4)) {
    throw MalformedFileError("bad checkpoint magic", 0);
  }
  const std::uint16_t version = reader.read_u16("version");
  if (version != kVersion) {
    throw VersionUnsupportedError("checkpoint format version " +
                                  std::to_string(version) +
                                  " is not supported");
  }
  const std::uint64_t manifest_len = reader.read_u64("manifest length");
  const std::uint64_t manifest_sum = reader.read_u64("manifest checksum");
  const std::string manifest_text =
      reader.read_bytes(manifest_len, "manifest");
  if (fnv1a64(manifest_text.data(), manifest_text.size()) != manifest_sum) {
    throw ChecksumMismatchError("manifest checksum mismatch");
  }
  Container c;
  c.manifest = parse_manifest_bytes(manifest_text);
  if (!with_payload) return c;

  const std::size_t payload_size = reader.size() - reader.offset();
  c.payload.resize(payload_size);
  const std::string raw = reader.read_bytes(payload_size, "payload");
  std::copy(raw.begin(), raw.end(), c.payload.begin());

  std::size_t expected = 0;
  for (const json& tj : c.manifest.at("tensors")) {
    expected += tj.at("bytes").get<std::size_t>();
  }
  if (expected != payload_size) {
    throw ManifestInconsistentError("payload size disagrees with manifest");
  }
  return c;
}

class TensorReader {
 public:
  explicit TensorReader(const Container& c) : container_(c) {
    for (const json& tj : c.manifest.at("tensors")) {
      index_[tj.at("name").get<std::string>()] = &tj;
    }
  }

  Tensor take(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw ManifestInconsistentError("missing tensor '" + name + "'");
    }
    const json& tj = *it->second;
    const std::size_t offset = tj.at("offset").get<std::size_t>();
    const std::size_t bytes = tj.at("bytes").get<std::size_t>();
    if (offset + bytes > container_.payload.size()) {
      throw ManifestInconsistentError("tensor '" + name +
                                      "' overruns the payload");
    }
    const unsigned char* base = container_.payload.data() + offset;
    if (fnv1a64(base, bytes) != tj.at("checksum").get<std::uint64_t>()) {
      throw ChecksumMismatchError("checksum mismatch for tensor '" + name +
                                  "'");
    }
    const Shape shape = tj.at("shape").get<Shape>();
    std::size_t numel = 1;
    for (std::size_t d : shape) numel *= d;
    if (numel * 8 != bytes) {
      throw ManifestInconsistentError("tensor '" + name +
                                      "' shape disagrees with byte count");
    }
    std::vector<double> values(numel);
    for (std::size_t i = 0; i < numel; ++i) {
      std::uint64_t u = 0;
      for (std::size_t b = 0; b < 8; ++b) {
        u |= static_cast<std::uint64_t>(base[i * 8 + b]) << (8 * b);
      }
      values[i] = std::bit_cast<double>(u);
    }
    Tensor t = Tensor::from_values(shape, std::move(values));
    t.set_requires_grad(true);
    return t;
  }

 private:
  const Container& container_;
  std::map<std::string, const json*> index_;
};

LegoBlock block_from_container(const std::string& prefix, const json& bj,
                               TensorReader& tensors) {
  LegoBlock block;
  block.modality = bj.at("modality").get<std::string>();
  block.task = task_from_json(bj.at("task"));
  block.config = block_config_from_json(bj.at("block_config"));
  block.encoder.config = encoder_config_from_json(bj.at("encoder_config"));
  block.encoder.standardizer = standardizer_from_json(bj.at("standardizer"));

  if (block.encoder.config.kind == EncoderKind::kSnn) {
    for (std::size_t i = 0; i < block.encoder.config.hidden_dims.size(); ++i) {
      SnnParams::Layer layer;
      layer.weight =
          tensors.take(prefix + "encoder.snn." + std::to_string(i) + ".weight");
      layer.bias =
          tensors.take(prefix + "encoder.snn." + std::to_string(i) + ".bias");
      block.encoder.snn.layers.push_back(std::move(layer));
    }
  } else if (block.encoder.config.kind == EncoderKind::kAbmil) {
    block.encoder.abmil.embed_weight =
        tensors.take(prefix + "encoder.abmil.embed_weight");
    block.encoder.abmil.embed_bias =
        tensors.take(prefix + "encoder.abmil.embed_bias");
    block.encoder.abmil.gate_v = tensors.take(prefix + "encoder.abmil.gate_v");
    block.encoder.abmil.gate_u = tensors.take(prefix + "encoder.abmil.gate_u");
    block.encoder.abmil.attn_w = tensors.take(prefix + "encoder.abmil.attn_w");
  }
  block.latent_init = tensors.take(prefix + "latent_init");
  const std::size_t n_sets =
      block.config.share_attn_across_passes ? 1 : block.config.depth;
  for (std::size_t i = 0; i < n_sets; ++i) {
    const std::string base = prefix + "attn." + std::to_string(i) + ".";
    AttentionParams ap;
    ap.w_q = tensors.take(base + "w_q");
    ap.w_k = tensors.take(base + "w_k");
    ap.w_v = tensors.take(base + "w_v");
    block.attn.push_back(std::move(ap));
  }
  block.head.ln_gain = tensors.take(prefix + "head.ln_gain");
  block.head.ln_bias = tensors.take(prefix + "head.ln_bias");
  block.head.weight = tensors.take(prefix + "head.weight");
  block.head.bias = tensors.take(prefix + "head.bias");

  if (block.latent_init.shape() !=
      Shape{block.config.latent_channels, block.config.latent_dim}) {
    throw ManifestInconsistentError(
        "manifest latent shape disagrees with stored latent_init");
  }
  return block;
}

json block_to_json(const LegoBlock& block) {
  json bj;
  bj["modality"] = block.modality;
  bj["task"] = task_to_json(block.task);
  bj["block_config"] = block_config_to_json(block.config);
  bj["encoder_config"] = encoder_config_to_json(block.encoder.config);
  bj["standardizer"] = standardizer_to_json(block.encoder.standardizer);
  return bj;
}

std::uint64_t block_param_checksum(const LegoBlock& block) {
  std::vector<NamedTensor> tensors;
  collect_block_tensors("", block, tensors);
  std::uint64_t h = 1469598103934665603ull;
  for (const NamedTensor& nt : tensors) {
    const auto bytes = tensor_bytes(nt.tensor);
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

}  // namespace

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "block") return ModelKind::kBlock;
  if (s == "merged") return ModelKind::kMerged;
  if (s == "fused") return ModelKind::kFused;
  throw ManifestInconsistentError("unknown model kind '" + s + "'");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBlock: return "block";
    case ModelKind::kMerged: return "merged";
    case ModelKind::kFused: return "fused";
  }
  return "?";
}

void save_block(const std::filesystem::path& path, const LegoBlock& block) {
  json manifest;
  manifest["kind"] = "block";
  manifest["block"] = block_to_json(block);
  std::vector<NamedTensor> tensors;
  collect_block_tensors("", block, tensors);
  write_container(path, std::move(manifest), tensors);
}

LegoBlock load_block(const std::filesystem::path& path) {
  const Container c = read_container(path, true);
  if (c.manifest.at("kind").get<std::string>() != "block") {
    throw ManifestInconsistentError("checkpoint is not a block");
  }
  TensorReader tensors(c);
  return block_from_container("", c.manifest.at("block"), tensors);
}

void save_merged(const std::filesystem::path& path, const MergedModel& model) {
  json manifest;
  manifest["kind"] = "merged";
  manifest["phase_mode"] = to_string(model.config.phase_mode);
  manifest["alpha"] = model.config.head_slerp.alpha;
  manifest["slerp_eps"] = model.config.head_slerp.eps;
  manifest["merge_layer_norm"] = model.config.merge_layer_norm;
  manifest["modality_order"] = model.modality_order;
  manifest["blocks"] = json::array();
  json checksums = json::array();
  std::vector<NamedTensor> tensors;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    manifest["blocks"].push_back(block_to_json(model.blocks[i]));
    checksums.push_back(block_param_checksum(model.blocks[i]));
    collect_block_tensors("block" + std::to_string(i) + ".", model.blocks[i],
                          tensors);
  }
  manifest["source_block_checksums"] = std::move(checksums);
  collect_head_tensors("head.", model.head, tensors);
  write_container(path, std::move(manifest), tensors);
}

MergedModel load_merged(const std::filesystem::path& path) {
  const Container c = read_container(path, true);
  if (c.manifest.at("kind").get<std::string>() != "merged") {
    throw ManifestInconsistentError("checkpoint is not a merged model");
  }
  TensorReader tensors(c);
  MergedModel model;
  model.config.phase_mode =
      phase_mode_from_string(c.manifest.at("phase_mode").get<std::string>());
  model.config.head_slerp.alpha = c.manifest.at("alpha").get<double>();
  model.config.head_slerp.eps = c.manifest.at("slerp_eps").get<double>();
  model.config.merge_layer_norm =
      c.manifest.at("merge_layer_norm").get<bool>();
  model.modality_order =
      c.manifest.at("modality_order").get<std::vector<std::string>>();
  const json& blocks = c.manifest.at("blocks");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    model.blocks.push_back(block_from_container(
        "block" + std::to_string(i) + ".", blocks[i], tensors));
  }
  model.head.ln_gain = tensors.take("head.ln_gain");
  model.head.ln_bias = tensors.take("head.ln_bias");
  model.head.weight = tensors.take("head.weight");
  model.head.bias = tensors.take("head.bias");
  if (model.blocks.empty()) {
    throw ManifestInconsistentError("merged checkpoint carries no blocks");
  }
  return model;
}

void save_fused(const std::filesystem::path& path, const FusedModel& model) {
  json manifest;
  manifest["kind"] = "fused";
  manifest["fuse_method"] = to_string(model.method);
  json schedule = json::array();
  for (const FuseLayer& layer : model.schedule) {
    schedule.push_back({layer.block_index, layer.pass_index});
  }
  manifest["schedule"] = std::move(schedule);
  manifest["blocks"] = json::array();
  std::vector<NamedTensor> tensors;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    manifest["blocks"].push_back(block_to_json(model.blocks[i]));
    collect_block_tensors("block" + std::to_string(i) + ".", model.blocks[i],
                          tensors);
  }
  tensors.push_back({"latent_init", model.latent_init});
  collect_head_tensors("head.", model.head, tensors);
  write_container(path, std::move(manifest), tensors);
}

FusedModel load_fused(const std::filesystem::path& path) {
  const Container c = read_container(path, true);
  if (c.manifest.at("kind").get<std::string>() != "fused") {
    throw ManifestInconsistentError("checkpoint is not a fused model");
  }
  TensorReader tensors(c);
  FusedModel model;
  model.method =
      fuse_method_from_string(c.manifest.at("fuse_method").get<std::string>());
  const json& blocks = c.manifest.at("blocks");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    model.blocks.push_back(block_from_container(
        "block" + std::to_string(i) + ".", blocks[i], tensors));
  }
  for (const json& layer : c.manifest.at("schedule")) {
    model.schedule.push_back(
        {layer.at(0).get<std::size_t>(), layer.at(1).get<std::size_t>()});
  }
  model.latent_init = tensors.take("latent_init");
  model.head.ln_gain = tensors.take("head.ln_gain");
  model.head.ln_bias = tensors.take("head.ln_bias");
  model.head.weight = tensors.take("head.weight");
  model.head.bias = tensors.take("head.bias");
  if (model.blocks.empty()) {
    throw ManifestInconsistentError("fused checkpoint carries no blocks");
  }
  return model;
}

CheckpointManifest read_manifest(const std::filesystem::path& path) {
  const Container c = read_container(path, false);
  CheckpointManifest m;
  m.kind = model_kind_from_string(c.manifest.at("kind").get<std::string>());
  m.raw = c.manifest;
  return m;
}

namespace {

json first_block_json(const CheckpointManifest& m) {
  if (m.kind == ModelKind::kBlock) return m.raw.at("block");
  return m.raw.at("blocks").at(0);
}

}  // namespace

CompatibilityReport compatibility_report(const CheckpointManifest& a,
                                         const CheckpointManifest& b) {
  const json ba = first_block_json(a);
  const json bb = first_block_json(b);
  CompatibilityReport report;
  auto add = [&report](const std::string& constraint, bool pass,
                       const std::string& detail) {
    report.items.push_back({constraint, pass, detail});
    report.all_pass = report.all_pass && pass;
  };

  const auto ca = block_config_from_json(ba.at("block_config"));
  const auto cb = block_config_from_json(bb.at("block_config"));
  add("latent_shape",
      ca.latent_channels == cb.latent_channels && ca.latent_dim == cb.latent_dim,
      std::to_string(ca.latent_channels) + "x" + std::to_string(ca.latent_dim) +
          " vs " + std::to_string(cb.latent_channels) + "x" +
          std::to_string(cb.latent_dim));

  const TaskSpec ta = task_from_json(ba.at("task"));
  const TaskSpec tb = task_from_json(bb.at("task"));
  add("task_spec", ta.compatible_with(tb),
      to_string(ta.kind) + "/" + std::to_string(ta.output_dim()) + " vs " +
          to_string(tb.kind) + "/" + std::to_string(tb.output_dim()));

  const std::size_t head_a =
      ca.latent_channels * ca.latent_dim * (ca.head_uses_imag ? 2 : 1);
  const std::size_t head_b =
      cb.latent_channels * cb.latent_dim * (cb.head_uses_imag ? 2 : 1);
  add("head_dims", head_a == head_b,
      std::to_string(head_a) + " vs " + std::to_string(head_b));

  // Informational: merging reads final latents only, so depth may differ.
  add("depth", true,
      std::to_string(ca.depth) + " vs " + std::to_string(cb.depth) +
          " (not required to match)");
  return report;
}

std::string compatibility_text(const CompatibilityReport& report) {
  std::string out;
  for (const CompatibilityItem& item : report.items) {
    out += item.constraint;
    out += item.pass ? ": pass (" : ": FAIL (";
    out += item.detail;
    out += ")\n";
  }
  out += report.all_pass ? "compatible\n" : "incompatible\n";
  return out;
}

}  // namespace mmlego
