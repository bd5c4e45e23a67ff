// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include <filesystem>
#include <fstream>

#include "uniqseg/errors.hpp"
#include "uniqseg/png_io.hpp"
#include "uniqseg/rng.hpp"
#include "uniqseg/scene.hpp"

using namespace uniqseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("uniqseg_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("png: rgb8 and gray16 round-trip, corruption detected") {
  fs::path dir = temp_dir("png");
  Rng rng(5);

  std::vector<std::uint8_t> rgb(31 * 17 * 3);
  for (auto& v : rgb) v = static_cast<std::uint8_t>(rng.uniform_u32(256));
  png::write_rgb8(dir / "a.png", 31, 17, rgb);
  int w = 0, h = 0;
  std::vector<std::uint8_t> back;
  png::read_rgb8(dir / "a.png", w, h, back);
  CHECK(w == 31);
  CHECK(h == 17);
  CHECK(back == rgb);

  std::vector<std::uint16_t> gray(13 * 9);
  for (auto& v : gray) v = static_cast<std::uint16_t>(rng.uniform_u32(65536));
  png::write_gray16(dir / "g.png", 13, 9, gray);
  std::vector<std::uint16_t> gback;
  png::read_gray16(dir / "g.png", w, h, gback);
  CHECK(gback == gray);

  // Flip one payload byte: the chunk CRC must catch it.
  auto bytes = slurp(dir / "a.png");
  bytes[bytes.size() / 2] ^= 0x40;
  std::ofstream(dir / "bad.png", std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  std::vector<std::uint8_t> dummy;
  CHECK_THROWS_AS(png::read_rgb8(dir / "bad.png", w, h, dummy), IntegrityError);
}

TEST_CASE("scene: determinism, non-overlap, area floor, label range") {
  scene::SceneSpec spec;
  scene::SyntheticScene a = scene::generate_scene(7, spec);
  scene::SyntheticScene b = scene::generate_scene(7, spec);
  CHECK(a.image == b.image);
  CHECK(a.masks == b.masks);
  CHECK(a.labels == b.labels);
  CHECK(a.scene_id == b.scene_id);

  scene::SyntheticScene c = scene::generate_scene(8, spec);
  CHECK(a.image.pixels != c.image.pixels);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    scene::SyntheticScene s = scene::generate_scene(seed, spec);
    CHECK(s.instance_count() >= spec.min_instances);
    CHECK(s.instance_count() <= spec.max_instances);

    // Exhaustive pixel scan: at most one mask claims any pixel.
    for (int y = 0; y < spec.image_size; ++y) {
      for (int x = 0; x < spec.image_size; ++x) {
        int owners = 0;
        for (const BinaryMask& m : s.masks) owners += m.get(y, x) ? 1 : 0;
        REQUIRE(owners <= 1);
      }
    }
    for (const BinaryMask& m : s.masks) CHECK(m.area() >= spec.min_instance_area);
    for (int label : s.labels) {
      CHECK(label >= 1);
      CHECK(label <= spec.class_count);
    }
  }
}

TEST_CASE("scene: forced single instance and impossible area floor") {
  scene::SceneSpec one;
  one.min_instances = 1;
  one.max_instances = 1;
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    CHECK(scene::generate_scene(seed, one).instance_count() == 1);

  // No shape can reach half the image area: every K fails down to 0.
  scene::SceneSpec impossible;
  impossible.image_size = 32;
  impossible.min_instance_area = 600;
  CHECK_THROWS_AS(scene::generate_scene(1, impossible), GenerationError);
}

TEST_CASE("scene: occlusion keeps masks disjoint and floored") {
  scene::SceneSpec spec;
  spec.occlusion = true;
  spec.min_instances = 3;
  spec.max_instances = 6;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    scene::SyntheticScene s = scene::generate_scene(seed, spec);
    for (std::size_t i = 0; i < s.masks.size(); ++i) {
      CHECK(s.masks[i].area() >= spec.min_instance_area);
      for (std::size_t j = i + 1; j < s.masks.size(); ++j)
        CHECK(s.masks[i].intersection_area(s.masks[j]) == 0);
    }
  }
}

TEST_CASE("scene: spec validation") {
  scene::SceneSpec bad;
  bad.image_size = 16;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = scene::SceneSpec{};
  bad.class_count = 1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = scene::SceneSpec{};
  bad.min_instances = 3;
  bad.max_instances = 2;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("dataset: render + manifest + load round-trip") {
  fs::path dir = temp_dir("dataset");
  scene::SceneSpec spec;
  spec.image_size = 64;
  spec.max_instances = 3;

  CHECK_THROWS_AS(scene::render_dataset(0, spec, dir, 1), ContractError);

  scene::DatasetManifest m = scene::render_dataset(10, spec, dir / "d", 42);
  CHECK(m.scenes.size() == 10);
  std::set<std::string> ids;
  for (const auto& e : m.scenes) ids.insert(e.scene_id);
  CHECK(ids.size() == 10);  // unique scene ids

  scene::DatasetManifest loaded = scene::load_manifest(dir / "d");
  CHECK(loaded.scenes.size() == 10);
  CHECK(loaded.seed == 42);
  CHECK(loaded.spec == spec);

  // Round-trip identity for every scene.
  for (const auto& e : m.scenes) {
    scene::SyntheticScene orig = scene::generate_scene(42 + (&e - m.scenes.data()), spec);
    scene::SyntheticScene back = scene::load_scene(loaded, e.scene_id);
    CHECK(back.image == orig.image);
    CHECK(back.masks == orig.masks);
    CHECK(back.labels == orig.labels);
  }

  CHECK_THROWS_AS(scene::load_scene(loaded, "missing"), NotFoundError);

  // Re-render into a second directory: byte-identical output files.
  scene::DatasetManifest m2 = scene::render_dataset(10, spec, dir / "d2", 42);
  CHECK(slurp(dir / "d" / m.scenes[0].image_path) == slurp(dir / "d2" / m2.scenes[0].image_path));
  CHECK(slurp(dir / "d" / "manifest.json") == slurp(dir / "d2" / "manifest.json"));

  // Truncated label map: integrity error on load.
  {
    fs::path victim = dir / "d" / m.scenes[1].labels_path;
    auto bytes = slurp(victim);
    bytes.resize(bytes.size() / 2);
    std::ofstream(victim, std::ios::binary | std::ios::trunc)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(scene::load_scene(loaded, m.scenes[1].scene_id), IntegrityError);
  }
}

TEST_CASE("dataset: label map flattening is lossless for disjoint masks") {
  scene::SceneSpec spec;
  spec.image_size = 64;
  scene::SyntheticScene s = scene::generate_scene(3, spec);
  LabelMap map = scene::masks_to_label_map(s.masks, 64, 64);
  std::vector<BinaryMask> back = scene::label_map_to_masks(map, s.instance_count());
  CHECK(back == s.masks);
}
