#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mmlego/datagen.hpp"
#include "mmlego/training.hpp"
#include "oracles.hpp"

using namespace mmlego;

namespace {

SyntheticSpec two_modality_spec(std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_samples = n;
  spec.latent_factor_dim = 4;
  spec.seed = seed;
  ModalitySpec tab;
  tab.name = "tab";
  tab.feature_dim = 12;
  tab.snr = 2.0;
  ModalitySpec bag;
  bag.name = "bag";
  bag.is_bag = true;
  bag.feature_dim = 6;
  bag.min_instances = 3;
  bag.max_instances = 6;
  bag.snr = 2.0;
  spec.modalities = {tab, bag};
  spec.task.kind = TaskKind::kBinary;
  return spec;
}

// Class-mean-difference linear probe, fit on the first half and scored on
// the second; a cheap lower bound on how informative a tabular view is.
double probe_auc(const MultimodalDataset& ds, const std::string& modality) {
  const std::size_t m = ds.modality_index(modality);
  const std::size_t n = ds.n_samples();
  const std::size_t d = ds.spec.modalities[m].feature_dim;
  std::vector<double> mean_pos(d, 0.0), mean_neg(d, 0.0);
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < n / 2; ++i) {
    const auto v = ds.modality_tables[m][i].features.values();
    if (ds.label_values[i] != 0.0) {
      for (std::size_t j = 0; j < d; ++j) mean_pos[j] += v[j];
      ++n_pos;
    } else {
      for (std::size_t j = 0; j < d; ++j) mean_neg[j] += v[j];
      ++n_neg;
    }
  }
  std::vector<double> direction(d);
  for (std::size_t j = 0; j < d; ++j) {
    direction[j] = mean_pos[j] / static_cast<double>(n_pos) -
                   mean_neg[j] / static_cast<double>(n_neg);
  }
  std::vector<double> scores;
  std::vector<bool> labels;
  for (std::size_t i = n / 2; i < n; ++i) {
    const auto v = ds.modality_tables[m][i].features.values();
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += direction[j] * v[j];
    scores.push_back(s);
    labels.push_back(ds.label_values[i] != 0.0);
  }
  return auc(scores, labels);
}

}  // namespace

TEST_CASE("generation is deterministic under the seed") {
  const MultimodalDataset a = generate(two_modality_spec(60, 5));
  const MultimodalDataset b = generate(two_modality_spec(60, 5));
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t i = 0; i < a.n_samples(); ++i) {
      const auto va = a.modality_tables[m][i].features.values();
      const auto vb = b.modality_tables[m][i].features.values();
      REQUIRE(va.size() == vb.size());
      for (std::size_t j = 0; j < va.size(); ++j) CHECK(va[j] == vb[j]);
    }
  }
  CHECK(a.label_values == b.label_values);
}

TEST_CASE("binary labels are balanced") {
  const MultimodalDataset ds = generate(two_modality_spec(500, 7));
  double positives = 0.0;
  for (double v : ds.label_values) positives += v;
  CHECK(positives / 500.0 == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("multiclass labels are quantile balanced") {
  SyntheticSpec spec = two_modality_spec(600, 9);
  spec.task.kind = TaskKind::kMulticlass;
  spec.task.n_classes = 3;
  const MultimodalDataset ds = generate(spec);
  std::vector<std::size_t> counts(3, 0);
  for (double v : ds.label_values) ++counts[static_cast<std::size_t>(v)];
  for (std::size_t c : counts) {
    CHECK(static_cast<double>(c) / 600.0 ==
          doctest::Approx(1.0 / 3.0).epsilon(0.05));
  }
}

TEST_CASE("noise-free views are highly informative") {
  SyntheticSpec spec = two_modality_spec(800, 11);
  spec.modalities[0].snr = std::numeric_limits<double>::infinity();
  spec.modalities[0].feature_dim = 24;
  const MultimodalDataset ds = generate(spec);
  CHECK(probe_auc(ds, "tab") > 0.95);
}

TEST_CASE("zero-snr views carry no signal") {
  SyntheticSpec spec = two_modality_spec(800, 13);
  spec.modalities[0].snr = 0.0;
  const MultimodalDataset ds = generate(spec);
  const double auc_value = probe_auc(ds, "tab");
  CHECK(auc_value > 0.4);
  CHECK(auc_value < 0.6);
}

TEST_CASE("overlap zero makes single-modality availability disjoint") {
  SyntheticSpec spec = two_modality_spec(100, 17);
  spec.overlap = 0.0;
  const MultimodalDataset ds = generate(spec);
  for (std::size_t i = 0; i < ds.n_samples(); ++i) {
    const int total = ds.availability[i][0] + ds.availability[i][1];
    CHECK(total == 1);  // exactly one modality each, never zero
  }
}

TEST_CASE("fractional overlap pairs exactly floor(rho n) samples") {
  SyntheticSpec spec = two_modality_spec(101, 19);
  spec.overlap = 0.5;
  const MultimodalDataset ds = generate(spec);
  std::size_t paired = 0;
  for (std::size_t i = 0; i < ds.n_samples(); ++i) {
    if (ds.availability[i][0] && ds.availability[i][1]) ++paired;
    CHECK(ds.availability[i][0] + ds.availability[i][1] >= 1);
  }
  CHECK(paired == 50);
}

TEST_CASE("overlap_mask pairs exactly floor(rho n) of the given rows") {
  std::vector<std::size_t> rows = {2, 3, 5, 7, 11, 13, 17};
  const auto mask = overlap_mask(rows, 20, 2, 0.43, 23);
  std::size_t paired = 0;
  for (std::size_t i : rows) {
    if (mask[i][0] && mask[i][1]) ++paired;
  }
  CHECK(paired == 3);  // floor(0.43 * 7)
  // Untouched rows stay fully available.
  CHECK(mask[0][0]);
  CHECK(mask[0][1]);
}

TEST_CASE("survival generation respects the censor rate and risk order") {
  SyntheticSpec spec = two_modality_spec(600, 29);
  spec.task.kind = TaskKind::kSurvival;
  spec.task.n_bins = 4;
  spec.censor_rate = 0.3;
  const MultimodalDataset ds = generate(spec);
  double censored = 0.0;
  for (bool c : ds.censored) censored += c ? 1.0 : 0.0;
  CHECK(censored / 600.0 == doctest::Approx(0.3).epsilon(0.15));
  for (double t : ds.label_values) CHECK(t > 0.0);
}

TEST_CASE("fold splits are 70/15/15 and deterministic") {
  const auto folds = split_folds(100, 5, {0.70, 0.15, 0.15}, 31);
  CHECK(folds.size() == 5);
  for (const FoldSplit& f : folds) {
    CHECK(f.train.size() == 70);
    CHECK(f.test.size() == 15);
    CHECK(f.val.size() == 15);
    std::set<std::size_t> all(f.train.begin(), f.train.end());
    all.insert(f.test.begin(), f.test.end());
    all.insert(f.val.begin(), f.val.end());
    CHECK(all.size() == 100);  // disjoint cover
  }
  const auto again = split_folds(100, 5, {0.70, 0.15, 0.15}, 31);
  CHECK(folds[0].train == again[0].train);

  CHECK_THROWS_AS(split_folds(10), TooFewSamplesError);
}

TEST_CASE("different seeds produce different splits") {
  std::size_t distinct = 0;
  const auto base = split_folds(100, 1, {0.70, 0.15, 0.15}, 0);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto other = split_folds(100, 1, {0.70, 0.15, 0.15}, seed);
    if (other[0].train != base[0].train) ++distinct;
  }
  CHECK(distinct == 10);
}

TEST_CASE("dataset files round trip bit-identically") {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "mmlego_datagen_test";
  std::filesystem::remove_all(dir);
  const MultimodalDataset ds = generate(two_modality_spec(40, 37));
  save_dataset(dir, ds);
  const MultimodalDataset loaded = load_dataset(dir);

  REQUIRE(loaded.n_samples() == ds.n_samples());
  CHECK(loaded.sample_ids == ds.sample_ids);
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
      const auto a = ds.modality_tables[m][i].features.values();
      const auto b = loaded.modality_tables[m][i].features.values();
      REQUIRE(a.size() == b.size());
      for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
    }
  }
  CHECK(loaded.label_values == ds.label_values);
  std::filesystem::remove_all(dir);
}

TEST_CASE("truncated bag payload reports the failing offset") {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "mmlego_trunc_test";
  std::filesystem::create_directories(dir);
  const MultimodalDataset ds = generate(two_modality_spec(25, 41));
  const std::filesystem::path path = dir / "bag.bag";
  save_bag_file(path, ds, "bag");

  const std::size_t full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 11);
  try {
    load_bag_file(path);
    FAIL("expected MalformedFileError");
  } catch (const MalformedFileError& e) {
    CHECK(e.byte_offset() <= full - 11);
    CHECK(e.byte_offset() > 0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty bag records are rejected at load") {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "mmlego_emptybag_test";
  std::filesystem::create_directories(dir);
  const std::filesystem::path path = dir / "bad.bag";
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char header[] = {'M', 'M', 'L', 'G', 1, 0};
    out.write(reinterpret_cast<const char*>(header), 6);
    const unsigned char record[] = {
        2, 0, 0, 0,        // id length
        's', '0',          // id
        0, 0, 0, 0,        // n_instances == 0
        3, 0, 0, 0,        // feat_dim
    };
    out.write(reinterpret_cast<const char*>(record), sizeof(record));
  }
  CHECK_THROWS_AS(load_bag_file(path), EmptyBagError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bad magic is malformed at offset zero") {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "mmlego_badmagic_test";
  std::filesystem::create_directories(dir);
  const std::filesystem::path path = dir / "bad.bag";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE";
  }
  try {
    load_bag_file(path);
    FAIL("expected MalformedFileError");
  } catch (const MalformedFileError& e) {
    CHECK(e.byte_offset() == 0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("labels csv round trips task kind and censorship") {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "mmlego_labels_test";
  std::filesystem::create_directories(dir);
  SyntheticSpec spec = two_modality_spec(30, 43);
  spec.task.kind = TaskKind::kSurvival;
  spec.censor_rate = 0.4;
  const MultimodalDataset ds = generate(spec);
  save_labels_csv(dir / "labels.csv", ds);
  const LabelTable table = load_labels_csv(dir / "labels.csv");
  CHECK(table.kind == TaskKind::kSurvival);
  CHECK(table.values == ds.label_values);
  for (std::size_t i = 0; i < ds.n_samples(); ++i) {
    CHECK(table.censored[i] == ds.censored[i]);
  }
  std::filesystem::remove_all(dir);
}
