// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <map>

#include "uniqseg/membank.hpp"
#include "uniqseg/rng.hpp"
#include "uniqseg/scene.hpp"

using namespace uniqseg;
using membank::MemoryBank;
using membank::PixelSample;
using membank::SamplingKind;
using membank::SamplingStrategy;

namespace {

std::vector<PixelSample<float>> make_samples(int count, const std::string& scene_id, int dim,
                                             std::int64_t step, int first_value = 0) {
  std::vector<PixelSample<float>> out;
  for (int i = 0; i < count; ++i) {
    PixelSample<float> s;
    s.embedding.assign(dim, static_cast<float>(first_value + i));
    s.scene_id = scene_id;
    s.instance_id = 1 + (i % 3);
    s.class_id = 1;
    s.step_added = step;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("memory bank: FIFO eviction arithmetic") {
  MemoryBank<float> bank(100, 4);
  bank.push(make_samples(60, "a", 4, 0, 0));
  CHECK(bank.size() == 60);
  bank.push(make_samples(60, "b", 4, 1, 1000));
  CHECK(bank.size() == 100);
  // The first 20 of scene "a" were evicted; the oldest survivor is a[20].
  CHECK(bank.entry(0).scene_id == "a");
  CHECK(bank.entry_embedding(0)[0] == 20.0f);
  CHECK(bank.entry(39).scene_id == "a");
  CHECK(bank.entry(40).scene_id == "b");
  CHECK(bank.entry(99).scene_id == "b");
  CHECK(bank.entry_embedding(99)[0] == 1059.0f);

  // Pushing nothing changes nothing.
  std::size_t before = bank.size();
  bank.push({});
  CHECK(bank.size() == before);

  // A batch larger than capacity keeps only the newest `capacity` samples.
  bank.push(make_samples(150, "c", 4, 2, 5000));
  CHECK(bank.size() == 100);
  CHECK(bank.entry(0).scene_id == "c");
  CHECK(bank.entry_embedding(0)[0] == 5050.0f);
  CHECK(bank.entry_embedding(99)[0] == 5149.0f);
}

TEST_CASE("memory bank: rejects background samples and bad dimensions") {
  MemoryBank<float> bank(10, 4);
  PixelSample<float> bad;
  bad.embedding.assign(4, 0.0f);
  bad.scene_id = "x";
  bad.instance_id = 0;  // background
  CHECK_THROWS_AS(bank.push({bad}), ContractError);

  PixelSample<float> wrong;
  wrong.embedding.assign(3, 0.0f);
  wrong.scene_id = "x";
  wrong.instance_id = 1;
  CHECK_THROWS_AS(bank.push({wrong}), ContractError);
}

TEST_CASE("memory bank: snapshot exclusion and copy semantics") {
  MemoryBank<float> bank(50, 2);
  bank.push(make_samples(10, "a", 2, 0));
  bank.push(make_samples(10, "b", 2, 1));

  // Excluding every stored scene produces an empty snapshot.
  auto empty = bank.snapshot({"a", "b"});
  CHECK(empty.size() == 0);

  auto all = bank.snapshot({});
  CHECK(all.size() == 20);

  auto only_b = bank.snapshot({"a"});
  CHECK(only_b.size() == 10);
  for (const auto& p : only_b.provenance) CHECK(p.scene_id == "b");

  // Mutating the bank afterwards leaves the snapshot untouched.
  float first = only_b.embeddings.at(0, 0);
  bank.push(make_samples(50, "c", 2, 2, 777));
  CHECK(only_b.embeddings.at(0, 0) == first);
  CHECK(only_b.size() == 10);
}

TEST_CASE("majority-vote downsampling picks the dominant owner per cell") {
  // 8x8 masks, stride 4 -> 2x2 cells. Instance 1 owns 12 of 16 pixels in the
  // top-left cell; instance 2 owns 16/16 of the bottom-right cell.
  BinaryMask m1(8, 8), m2(8, 8);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 3; ++x) m1.set(y, x, true);
  for (int y = 4; y < 8; ++y)
    for (int x = 4; x < 8; ++x) m2.set(y, x, true);

  LabelMap cells = membank::downsample_majority({m1, m2}, 4);
  CHECK(cells.at(0, 0) == 1);
  CHECK(cells.at(0, 1) == 0);  // background dominates
  CHECK(cells.at(1, 0) == 0);
  CHECK(cells.at(1, 1) == 2);

  // Ties go to the smaller id (background wins a 8/8 split).
  BinaryMask half(8, 8);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) half.set(y, x, true);
  LabelMap tied = membank::downsample_majority({half}, 4);
  CHECK(tied.at(0, 0) == 0);
}

TEST_CASE("sample_pixels: strategies, counts, and empty-foreground scenes") {
  scene::SceneSpec spec;
  spec.image_size = 64;
  spec.min_instances = 2;
  spec.max_instances = 4;
  scene::SyntheticScene s = scene::generate_scene(11, spec);

  nn::Tensor<float> fm({6, 16, 16});
  Rng frng(2);
  for (std::size_t i = 0; i < fm.size(); ++i) fm[i] = static_cast<float>(frng.uniform());

  LabelMap cells = membank::downsample_majority(s.masks, 4);
  std::map<int, int> cells_per_instance;
  int foreground_cells = 0;
  for (std::uint16_t v : cells.labels)
    if (v > 0) {
      ++cells_per_instance[v];
      ++foreground_cells;
    }

  Rng rng(3);
  SamplingStrategy dense;
  dense.kind = SamplingKind::Dense;
  auto all = membank::sample_pixels(fm, s, 4, dense, rng, 7);
  CHECK(static_cast<int>(all.size()) == foreground_cells);
  for (const auto& p : all) {
    CHECK(p.instance_id >= 1);
    CHECK(p.scene_id == s.scene_id);
    CHECK(p.step_added == 7);
    CHECK(p.class_id == s.labels[p.instance_id - 1]);
  }

  SamplingStrategy sparse;
  sparse.kind = SamplingKind::Sparse;
  sparse.pixels_per_image = 5;
  auto few = membank::sample_pixels(fm, s, 4, sparse, rng, 0);
  CHECK(static_cast<int>(few.size()) == std::min(5, foreground_cells));

  SamplingStrategy balanced;
  balanced.kind = SamplingKind::InstanceBalanced;
  balanced.pixels_per_instance = 3;
  auto bal = membank::sample_pixels(fm, s, 4, balanced, rng, 0);
  std::map<int, int> got;
  for (const auto& p : bal) ++got[p.instance_id];
  for (const auto& [inst, count] : cells_per_instance)
    CHECK(got[inst] == std::min(count, 3));

  // Embeddings are copies of the feature columns at the sampled cells.
  for (const auto& p : all) {
    bool found = false;
    for (int i = 0; i < 16 * 16 && !found; ++i) {
      if (cells.labels[i] != p.instance_id) continue;
      bool same = true;
      for (int c = 0; c < 6; ++c)
        same = same && p.embedding[c] == fm[static_cast<std::size_t>(c) * 256 + i];
      found = same;
    }
    CHECK(found);
  }

  // A scene without masks yields nothing.
  scene::SyntheticScene bare;
  bare.scene_id = "bare";
  bare.image = ImageU8(64, 64);
  CHECK(membank::sample_pixels(fm, bare, 4, dense, rng, 0).empty());

  // Determinism: identical generator state, identical draw.
  Rng r1(9), r2(9);
  auto d1 = membank::sample_pixels(fm, s, 4, balanced, r1, 0);
  auto d2 = membank::sample_pixels(fm, s, 4, balanced, r2, 0);
  REQUIRE(d1.size() == d2.size());
  for (std::size_t i = 0; i < d1.size(); ++i) {
    CHECK(d1[i].embedding == d2[i].embedding);
    CHECK(d1[i].instance_id == d2[i].instance_id);
  }
}

TEST_CASE("memory bank: capacity invariant over random operation sequences") {
  Rng rng(404);
  for (int seq = 0; seq < 50; ++seq) {
    std::size_t cap = 1 + rng.uniform_u32(40);
    MemoryBank<float> bank(cap, 3);
    std::int64_t last_step = -1;
    for (int op = 0; op < 40; ++op) {
      bank.push(make_samples(rng.uniform_int(0, 9), "s" + std::to_string(op % 4), 3, op));
      REQUIRE(bank.size() <= cap);
      // step_added never decreases along the FIFO order.
      for (std::size_t i = 0; i < bank.size(); ++i) {
        REQUIRE(bank.entry(i).step_added >= last_step - 40);  // sanity
        if (i > 0) REQUIRE(bank.entry(i).step_added >= bank.entry(i - 1).step_added);
      }
    }
  }
}
