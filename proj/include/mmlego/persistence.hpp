#pragma once

// Single-file checkpoint container for blocks, merged models and fused
// models: a fixed header, a UTF-8 JSON manifest (model structure, shapes,
// per-tensor checksums), then the raw tensor payload. The manifest is
// readable without touching the payload; every region is covered by a
// checksum so any single corrupted byte is detected at load.
//
// Layout: "MMLK" | u16 version | u64 manifest length | u64 manifest
// checksum (FNV-1a) | manifest bytes | payload (row-major little-endian
// f64 per tensor, in manifest order).

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmlego/legofuse.hpp"
#include "mmlego/legomerge.hpp"

namespace mmlego {

enum class ModelKind { kBlock, kMerged, kFused };

ModelKind model_kind_from_string(const std::string& s);
std::string to_string(ModelKind kind);

struct CheckpointManifest {
  ModelKind kind = ModelKind::kBlock;
  nlohmann::json raw;
};

void save_block(const std::filesystem::path& path, const LegoBlock& block);
LegoBlock load_block(const std::filesystem::path& path);

void save_merged(const std::filesystem::path& path, const MergedModel& model);
MergedModel load_merged(const std::filesystem::path& path);

void save_fused(const std::filesystem::path& path, const FusedModel& model);
FusedModel load_fused(const std::filesystem::path& path);

// Header + manifest only; the payload is neither read nor verified.
CheckpointManifest read_manifest(const std::filesystem::path& path);

struct CompatibilityItem {
  std::string constraint;
  bool pass = false;
  std::string detail;
};

struct CompatibilityReport {
  std::vector<CompatibilityItem> items;
  bool all_pass = true;
};

// Merge-compatibility constraints (latent shape, task spec, head dims)
// checked from two manifests. Depth is reported but never fails: merging
// operates on final latents, so depths may differ.
CompatibilityReport compatibility_report(const CheckpointManifest& a,
                                         const CheckpointManifest& b);

std::string compatibility_text(const CompatibilityReport& report);

}  // namespace mmlego
