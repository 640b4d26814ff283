#include "mmlego/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmlego/io.hpp"
#include "mmlego/rng.hpp"

namespace mmlego {

void SyntheticSpec::validate() const {
  if (n_samples == 0) throw ConfigError("dataset needs samples");
  if (latent_factor_dim == 0) throw ConfigError("latent factor dim must be positive");
  if (modalities.empty()) throw ConfigError("dataset needs modalities");
  for (const ModalitySpec& m : modalities) {
    if (m.name.empty()) throw ConfigError("modality needs a name");
    if (m.feature_dim == 0) throw ConfigError("modality feature dim must be positive");
    if (m.is_bag && (m.min_instances == 0 || m.max_instances < m.min_instances)) {
      throw ConfigError("bad instance range for bag modality '" + m.name + "'");
    }
    if (m.snr < 0.0) throw ConfigError("snr must be non-negative");
  }
  if (overlap < 0.0 || overlap > 1.0) throw ConfigError("overlap must lie in [0, 1]");
  if (censor_rate < 0.0 || censor_rate >= 1.0) {
    throw ConfigError("censor rate must lie in [0, 1)");
  }
  task.validate();
}

std::size_t MultimodalDataset::modality_index(const std::string& name) const {
  for (std::size_t m = 0; m < modality_names.size(); ++m) {
    if (modality_names[m] == name) return m;
  }
  throw ConfigError("unknown modality '" + name + "'");
}

namespace {

struct ViewScales {
  double signal = 1.0;
  double noise = 1.0;
};

ViewScales view_scales(double snr) {
  ViewScales s;
  if (snr == 0.0) {
    s.signal = 0.0;
    s.noise = 1.0;
  } else if (std::isinf(snr)) {
    s.noise = 0.0;
  } else {
    s.noise = 1.0 / snr;
  }
  return s;
}

std::vector<double> random_matrix(std::size_t rows, std::size_t cols,
                                  std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(rows * cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& x : out) x = dist(rng) * scale;
  return out;
}

// Exponential censoring clock whose rate is tuned by bisection so the
// realized censoring fraction matches the requested rate.
std::vector<bool> apply_censoring(std::vector<double>& times, double rate,
                                  std::mt19937_64& rng) {
  const std::size_t n = times.size();
  std::vector<bool> censored(n, false);
  if (rate <= 0.0) return censored;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> u(n);
  for (double& x : u) x = std::max(unit(rng), 1e-12);
  auto censored_fraction = [&](double lambda) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double clock = -std::log(u[i]) / lambda;
      c += clock < times[i] ? 1 : 0;
    }
    return static_cast<double>(c) / static_cast<double>(n);
  };
  double lo = 1e-6, hi = 1e6;
  for (int iter = 0; iter < 80; ++iter) {
    const double mid = std::sqrt(lo * hi);
    if (censored_fraction(mid) < rate) {
      lo = mid;  // censor more: faster clock
    } else {
      hi = mid;
    }
  }
  const double lambda = std::sqrt(lo * hi);
  for (std::size_t i = 0; i < n; ++i) {
    const double clock = -std::log(u[i]) / lambda;
    if (clock < times[i]) {
      times[i] = clock;
      censored[i] = true;
    }
  }
  return censored;
}

}  // namespace

MultimodalDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  MultimodalDataset ds;
  ds.spec = spec;
  const std::size_t n = spec.n_samples;
  const std::size_t zd = spec.latent_factor_dim;

  ds.sample_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.sample_ids[i] = "s" + std::to_string(i);
  }

  auto z_rng = seeded_rng(spec.seed, "factors");
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> z(n * zd);
  for (double& x : z) x = unit(z_rng);

  for (const ModalitySpec& mod : spec.modalities) {
    ds.modality_names.push_back(mod.name);
    const ViewScales scales = view_scales(mod.snr);
    auto map_rng = seeded_rng(spec.seed, "map:" + mod.name);
    const std::vector<double> mix = random_matrix(zd, mod.feature_dim, map_rng);
    auto noise_rng = seeded_rng(spec.seed, "noise:" + mod.name);
    auto count_rng = seeded_rng(spec.seed, "instances:" + mod.name);
    std::uniform_int_distribution<std::size_t> count_dist(mod.min_instances,
                                                          mod.max_instances);
    std::vector<ModalitySample> table(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> view(mod.feature_dim, 0.0);
      for (std::size_t k = 0; k < zd; ++k) {
        const double zv = z[i * zd + k] * scales.signal;
        for (std::size_t j = 0; j < mod.feature_dim; ++j) {
          view[j] += zv * mix[k * mod.feature_dim + j];
        }
      }
      if (mod.is_bag) {
        const std::size_t count = count_dist(count_rng);
        std::vector<double> bag(count * mod.feature_dim);
        for (std::size_t inst = 0; inst < count; ++inst) {
          for (std::size_t j = 0; j < mod.feature_dim; ++j) {
            bag[inst * mod.feature_dim + j] =
                view[j] + scales.noise * unit(noise_rng);
          }
        }
        table[i].features =
            Tensor::from_values({count, mod.feature_dim}, std::move(bag));
        table[i].is_bag = true;
      } else {
        for (double& v : view) v += scales.noise * unit(noise_rng);
        table[i].features =
            Tensor::from_values({mod.feature_dim}, std::move(view));
      }
    }
    ds.modality_tables.push_back(std::move(table));
  }

  // Labels from the shared factor only; modality noise never leaks in.
  auto label_rng = seeded_rng(spec.seed, "labels");
  std::vector<double> beta(zd);
  for (double& b : beta) b = unit(label_rng) / std::sqrt(static_cast<double>(zd));
  std::vector<double> score(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < zd; ++k) score[i] += beta[k] * z[i * zd + k];
  }

  ds.label_values.resize(n);
  ds.censored.assign(n, false);
  switch (spec.task.kind) {
    case TaskKind::kBinary: {
      std::vector<double> sorted = score;
      std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
      const double median = sorted[n / 2];
      for (std::size_t i = 0; i < n; ++i) {
        ds.label_values[i] = score[i] > median ? 1.0 : 0.0;
      }
      break;
    }
    case TaskKind::kMulticlass: {
      const std::size_t k = spec.task.n_classes;
      std::vector<double> sorted = score;
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> cuts;
      for (std::size_t c = 1; c < k; ++c) {
        cuts.push_back(sorted[c * n / k]);
      }
      for (std::size_t i = 0; i < n; ++i) {
        ds.label_values[i] = static_cast<double>(
            std::upper_bound(cuts.begin(), cuts.end(), score[i]) -
            cuts.begin());
      }
      break;
    }
    case TaskKind::kSurvival: {
      auto time_rng = seeded_rng(spec.seed, "times");
      std::vector<double> times(n);
      for (std::size_t i = 0; i < n; ++i) {
        // Log time linear in the risk score plus mild noise, so true risk
        // orders events.
        times[i] = std::exp(-2.0 * score[i] + 0.3 * unit(time_rng));
      }
      auto censor_rng = seeded_rng(spec.seed, "censor");
      ds.censored = apply_censoring(times, spec.censor_rate, censor_rng);
      ds.label_values = times;
      break;
    }
  }

  // Availability: floor(overlap * n) samples carry all modalities, the rest
  // exactly one (round-robin), so single-modality training sets are
  // disjoint at overlap 0.
  ds.availability.assign(n, std::vector<std::uint8_t>(spec.modalities.size(), 1));
  if (spec.overlap < 1.0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto pair_rng = seeded_rng(spec.seed, "overlap");
    std::shuffle(order.begin(), order.end(), pair_rng);
    const std::size_t paired = static_cast<std::size_t>(
        spec.overlap * static_cast<double>(n));
    for (std::size_t r = paired; r < n; ++r) {
      const std::size_t keep = (r - paired) % spec.modalities.size();
      for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
        ds.availability[order[r]][m] = (m == keep) ? 1 : 0;
      }
    }
  }

  ds.folds = split_folds(n, 5, {0.70, 0.15, 0.15},
                         seeded_rng(spec.seed, "folds")());
  return ds;
}

std::vector<FoldSplit> split_folds(std::size_t n_samples, std::size_t n_folds,
                                   std::array<double, 3> ratios,
                                   std::uint64_t seed) {
  if (n_samples < 20) {
    throw TooFewSamplesError("split_folds: need at least 20 samples");
  }
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split_folds: ratios must sum to 1");
  }
  std::vector<FoldSplit> folds;
  for (std::size_t f = 0; f < n_folds; ++f) {
    auto rng = seeded_rng(seed, "fold:" + std::to_string(f));
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train =
        static_cast<std::size_t>(ratios[0] * static_cast<double>(n_samples));
    const std::size_t n_test =
        static_cast<std::size_t>(ratios[1] * static_cast<double>(n_samples));
    FoldSplit split;
    split.train.assign(order.begin(), order.begin() + n_train);
    split.test.assign(order.begin() + n_train,
                      order.begin() + n_train + n_test);
    split.val.assign(order.begin() + n_train + n_test, order.end());
    folds.push_back(std::move(split));
  }
  return folds;
}

std::vector<std::vector<std::uint8_t>> overlap_mask(
    const std::vector<std::size_t>& indices, std::size_t n_samples,
    std::size_t n_modalities, double rho, std::uint64_t seed) {
  if (rho < 0.0 || rho > 1.0) throw ConfigError("overlap_mask: rho in [0, 1]");
  std::vector<std::vector<std::uint8_t>> mask(
      n_samples, std::vector<std::uint8_t>(n_modalities, 1));
  std::vector<std::size_t> order = indices;
  auto rng = seeded_rng(seed, "overlap_mask");
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t paired = static_cast<std::size_t>(
      rho * static_cast<double>(order.size()));
  for (std::size_t r = paired; r < order.size(); ++r) {
    const std::size_t keep = (r - paired) % n_modalities;
    for (std::size_t m = 0; m < n_modalities; ++m) {
      mask[order[r]][m] = (m == keep) ? 1 : 0;
    }
  }
  return mask;
}

// -------------------------------------------------------------- file io

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void save_tabular_csv(const std::filesystem::path& path,
                      const MultimodalDataset& dataset,
                      const std::string& modality) {
  const std::size_t m = dataset.modality_index(modality);
  const auto& table = dataset.modality_tables[m];
  std::ostringstream os;
  const std::size_t d = dataset.spec.modalities[m].feature_dim;
  os << "sample_id";
  for (std::size_t j = 0; j < d; ++j) os << ",f" << j;
  os << "\n";
  for (std::size_t i = 0; i < dataset.n_samples(); ++i) {
    os << dataset.sample_ids[i];
    for (double v : table[i].features.values()) os << ',' << format_double(v);
    os << "\n";
  }
  io::write_text_atomic(path, os.str());
}

void save_bag_file(const std::filesystem::path& path,
                   const MultimodalDataset& dataset,
                   const std::string& modality) {
  const std::size_t m = dataset.modality_index(modality);
  const auto& table = dataset.modality_tables[m];
  std::vector<unsigned char> out;
  io::append_bytes(out, "MMLG", 4);
  io::append_u16(out, 1);  // format version
  for (std::size_t i = 0; i < dataset.n_samples(); ++i) {
    const Tensor& bag = table[i].features;
    io::append_u32(out, static_cast<std::uint32_t>(dataset.sample_ids[i].size()));
    io::append_bytes(out, dataset.sample_ids[i].data(),
                     dataset.sample_ids[i].size());
    io::append_u32(out, static_cast<std::uint32_t>(bag.shape()[0]));
    io::append_u32(out, static_cast<std::uint32_t>(bag.shape()[1]));
    for (double v : bag.values()) io::append_f64(out, v);
  }
  io::write_file_atomic(path, out);
}

void save_labels_csv(const std::filesystem::path& path,
                     const MultimodalDataset& dataset) {
  std::ostringstream os;
  os << "sample_id,task_kind,value,censorship\n";
  const std::string kind = to_string(dataset.spec.task.kind);
  for (std::size_t i = 0; i < dataset.n_samples(); ++i) {
    os << dataset.sample_ids[i] << ',' << kind << ','
       << format_double(dataset.label_values[i]) << ','
       << (dataset.censored[i] ? 1 : 0) << "\n";
  }
  io::write_text_atomic(path, os.str());
}

void save_dataset(const std::filesystem::path& dir,
                  const MultimodalDataset& dataset) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["seed"] = dataset.spec.seed;
  manifest["n_samples"] = dataset.spec.n_samples;
  manifest["task_kind"] = to_string(dataset.spec.task.kind);
  manifest["modalities"] = nlohmann::json::array();
  for (const ModalitySpec& mod : dataset.spec.modalities) {
    nlohmann::json j;
    j["name"] = mod.name;
    j["is_bag"] = mod.is_bag;
    j["feature_dim"] = mod.feature_dim;
    manifest["modalities"].push_back(j);
    const std::filesystem::path file =
        dir / (mod.name + (mod.is_bag ? ".bag" : ".csv"));
    if (mod.is_bag) {
      save_bag_file(file, dataset, mod.name);
    } else {
      save_tabular_csv(file, dataset, mod.name);
    }
  }
  save_labels_csv(dir / "labels.csv", dataset);
  io::write_text_atomic(dir / "manifest.json", manifest.dump(2));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

double parse_double(const std::string& s, std::size_t offset,
                    const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw MalformedFileError(std::string("bad ") + what + " value '" + s + "'",
                             offset);
  }
}

}  // namespace

TabularTable load_tabular_csv(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  TabularTable table;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    if (!line.empty()) {
      const auto fields = split_csv_line(line);
      if (line_no == 0) {
        if (fields.empty() || fields[0] != "sample_id") {
          throw MalformedFileError("expected sample_id header", pos);
        }
        table.feature_dim = fields.size() - 1;
      } else {
        if (fields.size() != table.feature_dim + 1) {
          throw MalformedFileError("wrong field count", pos);
        }
        table.sample_ids.push_back(fields[0]);
        std::vector<double> v(table.feature_dim);
        for (std::size_t j = 0; j < table.feature_dim; ++j) {
          v[j] = parse_double(fields[j + 1], pos, "feature");
        }
        ModalitySample sample;
        sample.features = Tensor::from_values({table.feature_dim}, std::move(v));
        table.samples.push_back(std::move(sample));
      }
    }
    pos = end + 1;
    ++line_no;
  }
  if (table.feature_dim == 0) {
    throw MalformedFileError("empty tabular file", 0);
  }
  return table;
}

BagTable load_bag_file(const std::filesystem::path& path) {
  io::ByteReader reader(io::read_file(path));
  if (reader.read_bytes(4, "magic") != "MMLG") {
    throw MalformedFileError("bad magic", 0);
  }
  const std::uint16_t version = reader.read_u16("version");
  if (version != 1) {
    throw MalformedFileError("unsupported bag format version " +
                             std::to_string(version), 4);
  }
  BagTable table;
  while (!reader.exhausted()) {
    const std::uint32_t id_len = reader.read_u32("sample id length");
    const std::string id = reader.read_bytes(id_len, "sample id");
    const std::size_t count_offset = reader.offset();
    const std::uint32_t n_instances = reader.read_u32("instance count");
    const std::uint32_t feat_dim = reader.read_u32("feature dim");
    if (n_instances == 0) {
      throw EmptyBagError("empty bag record for sample '" + id + "' at byte " +
                          std::to_string(count_offset));
    }
    if (feat_dim == 0) {
      throw MalformedFileError("zero feature dim", count_offset + 4);
    }
    if (table.feature_dim == 0) {
      table.feature_dim = feat_dim;
    } else if (table.feature_dim != feat_dim) {
      throw MalformedFileError("inconsistent feature dim", count_offset + 4);
    }
    std::vector<double> payload(static_cast<std::size_t>(n_instances) * feat_dim);
    for (double& v : payload) v = reader.read_f64("payload");
    ModalitySample sample;
    sample.features =
        Tensor::from_values({n_instances, feat_dim}, std::move(payload));
    sample.is_bag = true;
    table.sample_ids.push_back(id);
    table.samples.push_back(std::move(sample));
  }
  return table;
}

LabelTable load_labels_csv(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  LabelTable table;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    if (!line.empty()) {
      const auto fields = split_csv_line(line);
      if (line_no == 0) {
        if (fields.size() != 4 || fields[0] != "sample_id") {
          throw MalformedFileError("expected labels header", pos);
        }
      } else {
        if (fields.size() != 4) {
          throw MalformedFileError("wrong field count", pos);
        }
        table.sample_ids.push_back(fields[0]);
        table.kind = task_kind_from_string(fields[1]);
        table.values.push_back(parse_double(fields[2], pos, "label"));
        table.censored.push_back(fields[3] == "1");
      }
    }
    pos = end + 1;
    ++line_no;
  }
  return table;
}

MultimodalDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_bytes = io::read_file(dir / "manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_bytes.begin(),
                                     manifest_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFileError(std::string("bad dataset manifest: ") + e.what(), 0);
  }

  MultimodalDataset ds;
  ds.spec.seed = manifest.at("seed").get<std::uint64_t>();
  ds.spec.n_samples = manifest.at("n_samples").get<std::size_t>();
  ds.spec.task.kind =
      task_kind_from_string(manifest.at("task_kind").get<std::string>());

  const LabelTable labels = load_labels_csv(dir / "labels.csv");
  ds.sample_ids = labels.sample_ids;
  ds.label_values = labels.values;
  ds.censored = labels.censored;

  for (const auto& j : manifest.at("modalities")) {
    ModalitySpec mod;
    mod.name = j.at("name").get<std::string>();
    mod.is_bag = j.at("is_bag").get<bool>();
    mod.feature_dim = j.at("feature_dim").get<std::size_t>();
    ds.spec.modalities.push_back(mod);
    ds.modality_names.push_back(mod.name);

    std::vector<std::string> ids;
    std::vector<ModalitySample> samples;
    if (mod.is_bag) {
      BagTable t = load_bag_file(dir / (mod.name + ".bag"));
      ids = std::move(t.sample_ids);
      samples = std::move(t.samples);
    } else {
      TabularTable t = load_tabular_csv(dir / (mod.name + ".csv"));
      ids = std::move(t.sample_ids);
      samples = std::move(t.samples);
    }
    if (ids != ds.sample_ids) {
      throw MalformedFileError(
          "sample ids in modality '" + mod.name + "' disagree with labels", 0);
    }
    ds.modality_tables.push_back(std::move(samples));
  }

  ds.availability.assign(ds.n_samples(),
                         std::vector<std::uint8_t>(ds.modality_names.size(), 1));
  ds.folds = split_folds(ds.n_samples(), 5, {0.70, 0.15, 0.15},
                         seeded_rng(ds.spec.seed, "folds")());
  return ds;
}

}  // namespace mmlego
