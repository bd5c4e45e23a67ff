// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>

#include "uniqseg/ap_eval.hpp"
#include "uniqseg/errors.hpp"
#include "uniqseg/rng.hpp"

using namespace uniqseg;
using apeval::APReport;
using apeval::AreaBands;
using apeval::Detection;
using apeval::SceneGroundtruth;

namespace {

BinaryMask rect(int size, int y0, int y1, int x0, int x1) {
  BinaryMask m(size, size);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.set(y, x, true);
  return m;
}

BinaryMask random_rect(Rng& rng, int size) {
  int w = rng.uniform_int(2, size / 2);
  int h = rng.uniform_int(2, size / 2);
  int y0 = rng.uniform_int(0, size - h - 1);
  int x0 = rng.uniform_int(0, size - w - 1);
  return rect(size, y0, y0 + h, x0, x0 + w);
}

}  // namespace

TEST_CASE("mask_iou: hand cases") {
  BinaryMask a = rect(8, 0, 2, 0, 2);  // 4 px
  CHECK(mask_iou(a, a) == 1.0);

  BinaryMask b = rect(8, 4, 6, 4, 6);  // disjoint 4 px
  CHECK(mask_iou(a, b) == 0.0);

  BinaryMask c = rect(8, 0, 2, 1, 3);  // 4 px, overlap 2 -> 2/6
  CHECK(mask_iou(a, c) == doctest::Approx(2.0 / 6.0).epsilon(1e-12));

  BinaryMask empty(8, 8);
  CHECK(mask_iou(empty, empty) == 0.0);

  BinaryMask other(4, 4);
  CHECK_THROWS_AS(mask_iou(a, other), ContractError);
}

TEST_CASE("evaluate: IoU-0.6 hand case, zero detections, perfect detector") {
  AreaBands bands;

  // One GT (8px strip), one detection shifted to IoU = 6/10 = 0.6.
  SceneGroundtruth sg{"s", {rect(16, 0, 1, 0, 8)}, {1}};
  Detection d{rect(16, 0, 1, 2, 10), 1, 0.9, "s"};
  APReport r = apeval::evaluate_detections({d}, {sg}, 1, bands);
  CHECK(r.ap50 == 1.0);
  CHECK(r.ap75 == 0.0);
  // Thresholds 0.50/0.55/0.60 pass -> AP = 3/10.
  CHECK(r.ap == doctest::Approx(0.3).epsilon(1e-9));

  // Zero detections: all AP fields are 0.
  APReport z = apeval::evaluate_detections({}, {sg}, 1, bands);
  CHECK(z.ap == 0.0);
  CHECK(z.ap50 == 0.0);

  // Detections identical to GT with score 1: AP 1.0 at every threshold.
  std::vector<SceneGroundtruth> scenes;
  std::vector<Detection> dets;
  for (int i = 0; i < 3; ++i) {
    std::string id = "p" + std::to_string(i);
    BinaryMask m = rect(16, i, i + 5, 2, 9);
    scenes.push_back({id, {m}, {1}});
    dets.push_back({m, 1, 1.0, id});
  }
  APReport p = apeval::evaluate_detections(dets, scenes, 1, bands);
  CHECK(p.ap == 1.0);
  CHECK(p.ap50 == 1.0);
  CHECK(p.ap75 == 1.0);

  CHECK_THROWS_AS(apeval::evaluate_detections({}, {}, 1, bands), ContractError);
}

TEST_CASE("evaluate: duplicate lower-scored true positive never raises AP") {
  AreaBands bands;
  SceneGroundtruth sg{"s", {rect(16, 0, 6, 0, 6)}, {1}};
  Detection good{rect(16, 0, 6, 0, 6), 1, 0.9, "s"};
  APReport base = apeval::evaluate_detections({good}, {sg}, 1, bands);

  Detection dup = good;
  dup.score = 0.5;
  APReport with_dup = apeval::evaluate_detections({good, dup}, {sg}, 1, bands);
  CHECK(with_dup.ap <= base.ap + 1e-12);
}

TEST_CASE("evaluate: detection order does not matter") {
  Rng rng(71);
  std::vector<SceneGroundtruth> scenes;
  std::vector<Detection> dets;
  for (int i = 0; i < 4; ++i) {
    std::string id = "s" + std::to_string(i);
    SceneGroundtruth sg;
    sg.scene_id = id;
    for (int k = 0; k < 2; ++k) {
      sg.masks.push_back(random_rect(rng, 24));
      sg.labels.push_back(rng.uniform_int(1, 2));
    }
    scenes.push_back(sg);
    for (int k = 0; k < 3; ++k)
      dets.push_back({random_rect(rng, 24), rng.uniform_int(1, 2), rng.uniform(0.1, 1.0), id});
  }
  APReport a = apeval::evaluate_detections(dets, scenes, 2, AreaBands::scaled_for(24, 24));
  std::reverse(dets.begin(), dets.end());
  APReport b = apeval::evaluate_detections(dets, scenes, 2, AreaBands::scaled_for(24, 24));
  CHECK(a.ap == b.ap);
  CHECK(a.ap50 == b.ap50);
  CHECK(a.ap75 == b.ap75);
  CHECK(a.ap_small == b.ap_small);
  CHECK(a.ap_medium == b.ap_medium);
  CHECK(a.ap_large == b.ap_large);
}

TEST_CASE("evaluate vs oracle: random small scenes agree") {
  Rng rng(1234);
  AreaBands bands = AreaBands::scaled_for(24, 24);
  for (int trial = 0; trial < 120; ++trial) {
    SceneGroundtruth sg;
    sg.scene_id = "t";
    int gts = rng.uniform_int(0, 3);
    for (int i = 0; i < gts; ++i) {
      sg.masks.push_back(random_rect(rng, 24));
      sg.labels.push_back(rng.uniform_int(1, 2));
    }
    std::vector<Detection> dets;
    int nd = rng.uniform_int(0, 5);
    for (int i = 0; i < nd; ++i)
      dets.push_back({random_rect(rng, 24), rng.uniform_int(1, 2), rng.uniform(0.05, 1.0), "t"});

    APReport a = apeval::evaluate_detections(dets, {sg}, 2, bands);
    APReport b = apeval::evaluate_oracle(dets, {sg}, 2, bands);
    CHECK(a.ap == doctest::Approx(b.ap).epsilon(1e-9));
    CHECK(a.ap50 == doctest::Approx(b.ap50).epsilon(1e-9));
    CHECK(a.ap75 == doctest::Approx(b.ap75).epsilon(1e-9));
  }

  // Empty groundtruth with detections: AP 0 in both routes.
  SceneGroundtruth none{"t", {}, {}};
  Detection d{random_rect(rng, 24), 1, 0.8, "t"};
  CHECK(apeval::evaluate_detections({d}, {none}, 2, bands).ap == 0.0);
  CHECK(apeval::evaluate_oracle({d}, {none}, 2, bands).ap == 0.0);

  // Size limits are enforced.
  SceneGroundtruth big;
  big.scene_id = "b";
  for (int i = 0; i < 4; ++i) {
    big.masks.push_back(random_rect(rng, 24));
    big.labels.push_back(1);
  }
  CHECK_THROWS_AS(apeval::evaluate_oracle({}, {big}, 1, bands), ContractError);
}

TEST_CASE("area bands scale with image area") {
  AreaBands b = AreaBands::scaled_for(128, 128);
  double ratio = (128.0 * 128.0) / (640.0 * 480.0);
  CHECK(b.small_max == doctest::Approx(1024.0 * ratio));
  CHECK(b.medium_max == doctest::Approx(9216.0 * ratio));
}
