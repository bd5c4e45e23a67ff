// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uniqseg/binary_mask.hpp"
#include "uniqseg/image.hpp"

namespace uniqseg::scene {

/// Generator parameters for synthetic multi-instance scenes.
struct SceneSpec {
  int image_size = 128;        // square images
  int class_count = 4;         // shape classes, ids 1..C
  int min_instances = 1;       // inclusive range for K
  int max_instances = 6;
  int min_instance_area = 64;  // pixels per visible mask
  bool occlusion = false;      // later instances occlude earlier ones

  void validate() const;  // throws ContractError on invariant violation
  bool operator==(const SceneSpec&) const = default;
};

/// An image plus K non-overlapping binary instance masks and class labels.
struct SyntheticScene {
  ImageU8 image;
  std::vector<BinaryMask> masks;
  std::vector<int> labels;  // class ids in 1..C
  std::string scene_id;
  std::uint64_t seed = 0;

  int instance_count() const { return static_cast<int>(masks.size()); }
};

struct ManifestEntry {
  std::string scene_id;
  std::string image_path;    // relative to root
  std::string labels_path;   // relative to root
  std::string sidecar_path;  // relative to root
  int instance_count = 0;
  std::vector<int> labels;
};

struct DatasetManifest {
  std::filesystem::path root;
  SceneSpec spec;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> scenes;

  const ManifestEntry* find(const std::string& scene_id) const;
};

/// Pure function of (seed, spec). Shapes are drawn from the class vocabulary
/// {disk, square, triangle, ring}; the background is low-amplitude value
/// noise. If K instances cannot be placed without overlap within 100 retries
/// per instance, the whole scene is regenerated with K-1; K == 0 throws
/// GenerationError.
SyntheticScene generate_scene(std::uint64_t seed, const SceneSpec& spec);

/// Writes `count` scenes (per-scene seeds seed+index) plus manifest.json.
/// On I/O failure every file created by this call is removed before the
/// error propagates.
DatasetManifest render_dataset(int count, const SceneSpec& spec,
                               const std::filesystem::path& root, std::uint64_t seed);

DatasetManifest load_manifest(const std::filesystem::path& root);

SyntheticScene load_scene(const DatasetManifest& manifest, const std::string& scene_id);

/// Loads every scene of the manifest, in manifest order.
std::vector<SyntheticScene> load_all_scenes(const DatasetManifest& manifest);

/// Flattens non-overlapping masks into a label map (0 = background).
LabelMap masks_to_label_map(const std::vector<BinaryMask>& masks, int height, int width);

std::vector<BinaryMask> label_map_to_masks(const LabelMap& map, int instance_count);

}  // namespace uniqseg::scene
