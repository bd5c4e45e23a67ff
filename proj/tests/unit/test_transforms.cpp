// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "uniqseg/rng.hpp"
#include "uniqseg/scene.hpp"
#include "uniqseg/transforms.hpp"

using namespace uniqseg;
using geo::TransformFamily;
using geo::TransformKind;
using geo::TransformSpec;

namespace {

ImageU8 checker_image(int size) {
  ImageU8 img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<std::uint8_t>((x * 7 + y * 13 + c * 31) & 0xff);
  return img;
}

}  // namespace

TEST_CASE("sample_transform: ranges, snapping, determinism") {
  TransformFamily family;  // hflip + crop [0.6, 1.0]
  Rng rng(9);
  int hits_crop = 0, hits_flip = 0;
  for (int i = 0; i < 10000; ++i) {
    TransformSpec g = geo::sample_transform(rng, family, 128, 4);
    if (g.kind == TransformKind::Crop) {
      ++hits_crop;
      CHECK(g.crop_ratio >= 0.6);
      CHECK(g.crop_ratio <= 1.0);
      int y0, x0, side;
      g.crop_window(128, y0, x0, side);
      CHECK(y0 % 4 == 0);
      CHECK(x0 % 4 == 0);
      CHECK(side % 4 == 0);
      CHECK(y0 + side <= 128);
      CHECK(x0 + side <= 128);
    } else {
      CHECK(g.kind == TransformKind::HFlip);
      ++hits_flip;
    }
  }
  CHECK(hits_crop > 4000);
  CHECK(hits_flip > 4000);

  Rng r1(77), r2(77);
  for (int i = 0; i < 50; ++i) {
    TransformSpec a = geo::sample_transform(r1, family, 128, 4);
    TransformSpec b = geo::sample_transform(r2, family, 128, 4);
    CHECK(a.kind == b.kind);
    CHECK(a.crop_ratio == b.crop_ratio);
    CHECK(a.crop_origin_y == b.crop_origin_y);
    CHECK(a.crop_origin_x == b.crop_origin_x);
  }

  TransformFamily none;
  none.enable_hflip = false;
  none.enable_crop = false;
  CHECK_THROWS_AS(none.validate(), ContractError);

  TransformFamily ident_only;
  ident_only.enable_hflip = false;
  ident_only.enable_crop = false;
  ident_only.enable_identity = true;
  Rng r3(1);
  CHECK(geo::sample_transform(r3, ident_only, 128, 4).kind == TransformKind::Identity);
}

TEST_CASE("apply_to_image: involution, identity, degenerate crop") {
  ImageU8 img = checker_image(64);
  TransformSpec flip;
  flip.kind = TransformKind::HFlip;
  CHECK(geo::apply_to_image(flip, geo::apply_to_image(flip, img, 4), 4) == img);

  TransformSpec ident;
  CHECK(geo::apply_to_image(ident, img, 4) == img);

  TransformSpec full_crop;
  full_crop.kind = TransformKind::Crop;
  full_crop.crop_ratio = 1.0;
  CHECK(geo::apply_to_image(full_crop, img, 4) == img);
}

TEST_CASE("apply_to_mask: mirror semantics, binary output, vanishing support") {
  BinaryMask m(64, 64);
  m.set(0, 0, true);
  m.set(10, 20, true);

  TransformSpec flip;
  flip.kind = TransformKind::HFlip;
  BinaryMask f = geo::apply_to_mask(flip, m, 4);
  CHECK(f.get(0, 63));
  CHECK(f.get(10, 43));
  CHECK(f.area() == 2);
  CHECK(geo::apply_to_mask(flip, f, 4) == m);

  // Crop window disjoint from the mask support: all-zero output.
  BinaryMask corner(64, 64);
  corner.set(0, 0, true);
  TransformSpec crop;
  crop.kind = TransformKind::Crop;
  crop.crop_ratio = 40.0 / 64.0;
  crop.crop_origin_y = 20.0 / 64.0;
  crop.crop_origin_x = 20.0 / 64.0;
  CHECK(geo::apply_to_mask(crop, corner, 4).area() == 0);

  TransformSpec ident;
  CHECK(geo::apply_to_mask(ident, m, 4) == m);
}

TEST_CASE("apply_to_mask: non-overlap preserved under every kind") {
  scene::SceneSpec spec;
  spec.image_size = 64;
  spec.min_instances = 3;
  spec.max_instances = 6;
  Rng rng(31);
  TransformFamily family;
  family.enable_rotation = true;
  family.enable_scaling = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    scene::SyntheticScene s = scene::generate_scene(seed, spec);
    TransformSpec g = geo::sample_transform(rng, family, 64, 4);
    std::vector<BinaryMask> t;
    for (const BinaryMask& m : s.masks) t.push_back(geo::apply_to_mask(g, m, 4));
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t j = i + 1; j < t.size(); ++j)
        CHECK(t[i].intersection_area(t[j]) == 0);
  }
}

TEST_CASE("apply_to_feature: identity pass-through, hflip mirror, crop oracle") {
  using Graph = nn::Graph<double>;
  Graph g;
  nn::Tensor<double> fm({2, 4, 4});
  for (std::size_t i = 0; i < fm.size(); ++i) fm[i] = static_cast<double>(i) * 0.25 - 1.0;
  auto v = g.constant(fm);

  TransformSpec ident;
  CHECK(geo::apply_to_feature(g, v, ident, 4) == v);  // same node, not a copy

  TransformSpec flip;
  flip.kind = TransformKind::HFlip;
  auto flipped = geo::apply_to_feature(g, v, flip, 4);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        CHECK(g.value(flipped).at(c, y, x) == fm.at(c, y, 3 - x));

  // Stride-aligned crop against an independent index-arithmetic oracle:
  // window = top-left 2x2 cells of the 4x4 map (8px window at stride 4 on a
  // 16px image), resized back to 4x4 with half-pixel bilinear sampling.
  TransformSpec crop;
  crop.kind = TransformKind::Crop;
  crop.crop_ratio = 0.5;
  crop.crop_origin_y = 0.0;
  crop.crop_origin_x = 0.0;
  auto cropped = geo::apply_to_feature(g, v, crop, 4);
  for (int c = 0; c < 2; ++c) {
    for (int oy = 0; oy < 4; ++oy) {
      for (int ox = 0; ox < 4; ++ox) {
        // Source position in window coords (window = rows/cols 0..1).
        double sy = (oy + 0.5) * 2.0 / 4.0 - 0.5;
        double sx = (ox + 0.5) * 2.0 / 4.0 - 0.5;
        sy = std::clamp(sy, 0.0, 1.0);
        sx = std::clamp(sx, 0.0, 1.0);
        int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
        y0 = std::min(y0, 0);
        x0 = std::min(x0, 0);
        double fy = sy - y0, fx = sx - x0;
        double expect = (1 - fy) * ((1 - fx) * fm.at(c, y0, x0) + fx * fm.at(c, y0, x0 + 1)) +
                        fy * ((1 - fx) * fm.at(c, y0 + 1, x0) + fx * fm.at(c, y0 + 1, x0 + 1));
        CHECK(g.value(cropped).at(c, oy, ox) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }

  // Non-stride-aligned crops are contract errors at feature level.
  TransformSpec bad;
  bad.kind = TransformKind::Crop;
  bad.crop_ratio = 0.5;
  bad.crop_origin_y = 2.0 / 16.0;  // 2px offset, stride is 4
  bad.crop_origin_x = 0.0;
  CHECK_THROWS_AS(geo::apply_to_feature(g, v, bad, 4), ContractError);
}

TEST_CASE("transform spec: JSON round-trip") {
  TransformSpec crop;
  crop.kind = TransformKind::Crop;
  crop.crop_ratio = 0.75;
  crop.crop_origin_y = 0.125;
  crop.crop_origin_x = 0.0625;
  TransformSpec back = TransformSpec::from_json(crop.to_json());
  CHECK(back.kind == TransformKind::Crop);
  CHECK(back.crop_ratio == crop.crop_ratio);
  CHECK(back.crop_origin_y == crop.crop_origin_y);
  CHECK(back.crop_origin_x == crop.crop_origin_x);

  TransformSpec rot;
  rot.kind = TransformKind::Rotation;
  rot.angle_deg = 33.5;
  CHECK(TransformSpec::from_json(rot.to_json()).angle_deg == 33.5);
}

TEST_CASE("rotation/scaling extensions act consistently on image and mask") {
  ImageU8 img = checker_image(64);
  BinaryMask m(64, 64);
  for (int y = 28; y < 36; ++y)
    for (int x = 28; x < 36; ++x) m.set(y, x, true);

  TransformSpec rot;
  rot.kind = TransformKind::Rotation;
  rot.angle_deg = 45.0;
  BinaryMask rm = geo::apply_to_mask(rot, m, 4);
  CHECK(rm.area() > 0);  // centered square stays near the center
  CHECK(rm.get(32, 32) == m.get(32, 32));

  TransformSpec sc;
  sc.kind = TransformKind::Scaling;
  sc.scale_factor = 2.0;
  BinaryMask sm = geo::apply_to_mask(sc, m, 4);
  // Zoom-in doubles the linear extent of the centered square.
  CHECK(sm.area() > 3 * m.area());
  ImageU8 si = geo::apply_to_image(sc, img, 4);
  CHECK(si.pixels != img.pixels);
}
