// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "uniqseg/errors.hpp"
#include "uniqseg/png_io.hpp"
#include "uniqseg/rng.hpp"

namespace uniqseg::scene {
namespace {

using nlohmann::json;

constexpr int kPlacementRetries = 100;

enum class ShapeKind { Disk, Square, Triangle, Ring };

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  double m = v - c;
  return {r + m, g + m, b + m};
}

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

/// Rasterizes one shape into a fresh mask. Returns foreground pixel count.
long long raster_shape(ShapeKind kind, double cx, double cy, double ext, double angle,
                       double inner_ratio, BinaryMask& mask) {
  int size = mask.height();
  int y0 = std::max(0, static_cast<int>(std::floor(cy - ext - 1)));
  int y1 = std::min(size - 1, static_cast<int>(std::ceil(cy + ext + 1)));
  int x0 = std::max(0, static_cast<int>(std::floor(cx - ext - 1)));
  int x1 = std::min(size - 1, static_cast<int>(std::ceil(cx + ext + 1)));

  double vx[3], vy[3];
  if (kind == ShapeKind::Triangle) {
    for (int i = 0; i < 3; ++i) {
      double a = angle + 2.0943951023931953 * i;  // 2*pi/3
      vx[i] = cx + ext * std::cos(a);
      vy[i] = cy + ext * std::sin(a);
    }
  }

  long long count = 0;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      double px = x + 0.5, py = y + 0.5;
      double dx = px - cx, dy = py - cy;
      bool in = false;
      switch (kind) {
        case ShapeKind::Disk:
          in = dx * dx + dy * dy <= ext * ext;
          break;
        case ShapeKind::Square: {
          double half = ext * 0.9;
          in = std::abs(dx) <= half && std::abs(dy) <= half;
          break;
        }
        case ShapeKind::Triangle: {
          double d0 = (vx[1] - vx[0]) * (py - vy[0]) - (vy[1] - vy[0]) * (px - vx[0]);
          double d1 = (vx[2] - vx[1]) * (py - vy[1]) - (vy[2] - vy[1]) * (px - vx[1]);
          double d2 = (vx[0] - vx[2]) * (py - vy[2]) - (vy[0] - vy[2]) * (px - vx[2]);
          bool neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
          bool pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
          in = !(neg && pos);
          break;
        }
        case ShapeKind::Ring: {
          double r2 = dx * dx + dy * dy;
          double inner = ext * inner_ratio;
          in = r2 <= ext * ext && r2 >= inner * inner;
          break;
        }
      }
      if (in) {
        mask.set(y, x, true);
        ++count;
      }
    }
  }
  return count;
}

struct PlacedInstance {
  BinaryMask mask;
  int label = 0;
  Rgb color{};
};

/// One full placement attempt for exactly k instances. Returns false when a
/// non-overlapping arrangement could not be found.
bool try_place(Rng& rng, const SceneSpec& spec, int k, std::vector<PlacedInstance>& out) {
  int size = spec.image_size;
  out.clear();
  BinaryMask occupancy(size, size);

  for (int i = 0; i < k; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      int label = rng.uniform_int(1, spec.class_count);
      // Class ids map onto the four shape kinds; with C > 4 extra classes
      // reuse kinds cyclically (visual separability degrades above 4).
      ShapeKind kind = static_cast<ShapeKind>((label - 1) % 4);
      double ext = rng.uniform(0.055, 0.16) * size;
      double margin = ext + 2.0;
      if (2.0 * margin >= size) continue;
      double cx = rng.uniform(margin, size - margin);
      double cy = rng.uniform(margin, size - margin);
      double angle = rng.uniform(0.0, 6.283185307179586);
      double inner_ratio = rng.uniform(0.45, 0.62);

      BinaryMask candidate(size, size);
      long long area = raster_shape(kind, cx, cy, ext, angle, inner_ratio, candidate);
      if (area < spec.min_instance_area) continue;
      if (!spec.occlusion && candidate.intersection_area(occupancy) > 0) continue;

      occupancy.or_with(candidate);

      Rgb color = hsv_to_rgb(rng.uniform(), rng.uniform(0.45, 0.95), rng.uniform(0.45, 0.92));
      out.push_back({std::move(candidate), label, color});
      placed = true;
    }
    if (!placed) return false;
  }
  return true;
}

void render_background(Rng& rng, ImageU8& img) {
  int size = img.height;
  int cell = 16;
  int gw = size / cell + 2;
  std::vector<double> grid(static_cast<std::size_t>(gw) * gw);
  // Fixed base level: the texture varies per scene but its statistics do
  // not, so the background carries no cheap scene-identity signature.
  double base = 65.0;
  for (auto& g : grid) g = base + rng.uniform(-18.0, 18.0);

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double fy = static_cast<double>(y) / cell;
      double fx = static_cast<double>(x) / cell;
      int iy = static_cast<int>(fy), ix = static_cast<int>(fx);
      double ty = fy - iy, tx = fx - ix;
      double v00 = grid[static_cast<std::size_t>(iy) * gw + ix];
      double v01 = grid[static_cast<std::size_t>(iy) * gw + ix + 1];
      double v10 = grid[static_cast<std::size_t>(iy + 1) * gw + ix];
      double v11 = grid[static_cast<std::size_t>(iy + 1) * gw + ix + 1];
      double v = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
      double fine = rng.uniform(-6.0, 6.0);
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = clamp_u8(v + fine + rng.uniform(-3.0, 3.0));
    }
  }
}

}  // namespace

void SceneSpec::validate() const {
  if (image_size < 32) throw ContractError("SceneSpec: image_size must be >= 32");
  if (class_count < 2) throw ContractError("SceneSpec: class_count must be >= 2");
  if (min_instances < 1 || max_instances < min_instances)
    throw ContractError("SceneSpec: instances_per_scene range is empty");
  if (min_instance_area < 1) throw ContractError("SceneSpec: min_instance_area must be >= 1");
}

SyntheticScene generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  Rng rng = Rng::derive(seed, "scene-synth");
  int size = spec.image_size;

  // Occluded arrangements may hide an instance below the area floor; that
  // counts as a placement failure for the K-decrement rule.
  auto visible_ok = [&](const std::vector<PlacedInstance>& placed) {
    if (!spec.occlusion) return true;
    LabelMap vis(size, size);
    for (std::size_t i = 0; i < placed.size(); ++i)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          if (placed[i].mask.get(y, x)) vis.at(y, x) = static_cast<std::uint16_t>(i + 1);
    std::vector<long long> areas(placed.size(), 0);
    for (std::uint16_t v : vis.labels)
      if (v != 0) ++areas[v - 1];
    for (long long a : areas)
      if (a < spec.min_instance_area) return false;
    return true;
  };

  int k = rng.uniform_int(spec.min_instances, spec.max_instances);
  std::vector<PlacedInstance> placed;
  while (true) {
    if (try_place(rng, spec, k, placed) && visible_ok(placed)) break;
    --k;
    if (k <= 0)
      throw GenerationError("generate_scene: cannot place any instance for seed " +
                            std::to_string(seed));
  }

  SyntheticScene out;
  out.seed = seed;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%016llx", static_cast<unsigned long long>(seed));
    out.scene_id = buf;
  }
  out.image = ImageU8(size, size);
  render_background(rng, out.image);

  // Paint in placement order; with occlusion enabled later shapes overwrite
  // earlier ones and masks keep only visible pixels.
  LabelMap visible(size, size);
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const PlacedInstance& inst = placed[i];
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (!inst.mask.get(y, x)) continue;
        visible.at(y, x) = static_cast<std::uint16_t>(i + 1);
        double shade = rng.uniform(-0.045, 0.045);
        out.image.at(y, x, 0) = clamp_u8((inst.color.r + shade) * 255.0);
        out.image.at(y, x, 1) = clamp_u8((inst.color.g + shade) * 255.0);
        out.image.at(y, x, 2) = clamp_u8((inst.color.b + shade) * 255.0);
      }
    }
  }

  out.masks = label_map_to_masks(visible, static_cast<int>(placed.size()));
  for (const PlacedInstance& inst : placed) out.labels.push_back(inst.label);
  return out;
}

LabelMap masks_to_label_map(const std::vector<BinaryMask>& masks, int height, int width) {
  LabelMap map(height, width);
  for (std::size_t k = 0; k < masks.size(); ++k) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (masks[k].get(y, x)) {
          if (map.at(y, x) != 0) throw ContractError("masks_to_label_map: overlapping masks");
          map.at(y, x) = static_cast<std::uint16_t>(k + 1);
        }
      }
    }
  }
  return map;
}

std::vector<BinaryMask> label_map_to_masks(const LabelMap& map, int instance_count) {
  std::vector<BinaryMask> masks(instance_count, BinaryMask(map.height, map.width));
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      int v = map.at(y, x);
      if (v == 0) continue;
      if (v > instance_count) throw IntegrityError("label map references unknown instance");
      masks[v - 1].set(y, x, true);
    }
  }
  return masks;
}

namespace {

json spec_to_json(const SceneSpec& s) {
  return json{{"image_size", s.image_size},
              {"class_count", s.class_count},
              {"min_instances", s.min_instances},
              {"max_instances", s.max_instances},
              {"min_instance_area", s.min_instance_area},
              {"occlusion", s.occlusion}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec s;
  s.image_size = j.at("image_size").get<int>();
  s.class_count = j.at("class_count").get<int>();
  s.min_instances = j.at("min_instances").get<int>();
  s.max_instances = j.at("max_instances").get<int>();
  s.min_instance_area = j.at("min_instance_area").get<int>();
  s.occlusion = j.at("occlusion").get<bool>();
  return s;
}

/// Removes files created by an aborted render_dataset call.
struct PartialOutputGuard {
  std::vector<std::filesystem::path> created;
  bool committed = false;

  ~PartialOutputGuard() {
    if (committed) return;
    std::error_code ec;
    for (const auto& p : created) std::filesystem::remove(p, ec);
  }
};

}  // namespace

const ManifestEntry* DatasetManifest::find(const std::string& scene_id) const {
  for (const ManifestEntry& e : scenes)
    if (e.scene_id == scene_id) return &e;
  return nullptr;
}

DatasetManifest render_dataset(int count, const SceneSpec& spec,
                               const std::filesystem::path& root, std::uint64_t seed) {
  if (count < 1) throw ContractError("render_dataset: count must be >= 1");
  spec.validate();

  std::filesystem::create_directories(root / "scenes");
  PartialOutputGuard guard;

  DatasetManifest manifest;
  manifest.root = root;
  manifest.spec = spec;
  manifest.seed = seed;

  for (int i = 0; i < count; ++i) {
    SyntheticScene s = generate_scene(seed + static_cast<std::uint64_t>(i), spec);

    ManifestEntry e;
    e.scene_id = s.scene_id;
    e.image_path = "scenes/" + s.scene_id + ".png";
    e.labels_path = "scenes/" + s.scene_id + ".labels.png";
    e.sidecar_path = "scenes/" + s.scene_id + ".json";
    e.instance_count = s.instance_count();
    e.labels = s.labels;

    png::write_rgb8(root / e.image_path, s.image.width, s.image.height, s.image.pixels);
    guard.created.push_back(root / e.image_path);

    LabelMap map = masks_to_label_map(s.masks, s.image.height, s.image.width);
    png::write_gray16(root / e.labels_path, map.width, map.height, map.labels);
    guard.created.push_back(root / e.labels_path);

    json sidecar{{"scene_id", s.scene_id},
                 {"seed", s.seed},
                 {"instance_count", s.instance_count()},
                 {"labels", s.labels},
                 {"image_size", spec.image_size}};
    std::ofstream sf(root / e.sidecar_path, std::ios::trunc);
    if (!sf) throw IoError("render_dataset: cannot write sidecar");
    sf << sidecar.dump(2) << "\n";
    if (!sf) throw IoError("render_dataset: short sidecar write");
    guard.created.push_back(root / e.sidecar_path);

    manifest.scenes.push_back(std::move(e));
  }

  json scenes_json = json::array();
  for (const ManifestEntry& e : manifest.scenes) {
    scenes_json.push_back(json{{"scene_id", e.scene_id},
                               {"image", e.image_path},
                               {"labels_map", e.labels_path},
                               {"sidecar", e.sidecar_path},
                               {"instance_count", e.instance_count},
                               {"labels", e.labels}});
  }
  json m{{"format_version", 1},
         {"seed", seed},
         {"count", count},
         {"spec", spec_to_json(spec)},
         {"scenes", scenes_json}};
  std::ofstream mf(root / "manifest.json", std::ios::trunc);
  if (!mf) throw IoError("render_dataset: cannot write manifest");
  mf << m.dump(2) << "\n";
  if (!mf) throw IoError("render_dataset: short manifest write");

  guard.committed = true;
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  std::ifstream f(root / "manifest.json");
  if (!f) throw NotFoundError("load_manifest: no manifest at " + root.string());
  json m;
  try {
    f >> m;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("load_manifest: bad JSON: ") + e.what());
  }

  DatasetManifest manifest;
  manifest.root = root;
  manifest.seed = m.at("seed").get<std::uint64_t>();
  manifest.spec = spec_from_json(m.at("spec"));
  for (const json& sj : m.at("scenes")) {
    ManifestEntry e;
    e.scene_id = sj.at("scene_id").get<std::string>();
    e.image_path = sj.at("image").get<std::string>();
    e.labels_path = sj.at("labels_map").get<std::string>();
    e.sidecar_path = sj.at("sidecar").get<std::string>();
    e.instance_count = sj.at("instance_count").get<int>();
    e.labels = sj.at("labels").get<std::vector<int>>();
    if (!std::filesystem::exists(root / e.image_path) ||
        !std::filesystem::exists(root / e.labels_path))
      throw IntegrityError("load_manifest: listed file missing for " + e.scene_id);
    manifest.scenes.push_back(std::move(e));
  }
  return manifest;
}

SyntheticScene load_scene(const DatasetManifest& manifest, const std::string& scene_id) {
  const ManifestEntry* e = manifest.find(scene_id);
  if (!e) throw NotFoundError("load_scene: unknown scene_id " + scene_id);

  SyntheticScene s;
  s.scene_id = e->scene_id;

  int w = 0, h = 0;
  png::read_rgb8(manifest.root / e->image_path, w, h, s.image.pixels);
  s.image.width = w;
  s.image.height = h;

  LabelMap map;
  png::read_gray16(manifest.root / e->labels_path, map.width, map.height, map.labels);
  if (map.width != w || map.height != h)
    throw IntegrityError("load_scene: image/label size mismatch for " + scene_id);

  std::ifstream sf(manifest.root / e->sidecar_path);
  if (!sf) throw IntegrityError("load_scene: missing sidecar for " + scene_id);
  json sidecar;
  try {
    sf >> sidecar;
  } catch (const json::exception& ex) {
    throw IntegrityError(std::string("load_scene: bad sidecar JSON: ") + ex.what());
  }
  s.seed = sidecar.at("seed").get<std::uint64_t>();
  s.labels = sidecar.at("labels").get<std::vector<int>>();
  int k = sidecar.at("instance_count").get<int>();
  if (k != static_cast<int>(s.labels.size()) || k != e->instance_count)
    throw IntegrityError("load_scene: inconsistent instance counts for " + scene_id);

  s.masks = label_map_to_masks(map, k);
  return s;
}

std::vector<SyntheticScene> load_all_scenes(const DatasetManifest& manifest) {
  std::vector<SyntheticScene> out;
  out.reserve(manifest.scenes.size());
  for (const ManifestEntry& e : manifest.scenes) out.push_back(load_scene(manifest, e.scene_id));
  return out;
}

}  // namespace uniqseg::scene
