// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "uniqseg/checkpoint.hpp"
#include "uniqseg/matching.hpp"
#include "uniqseg/model.hpp"
#include "uniqseg/scene.hpp"

using namespace uniqseg;

namespace {

ImageU8 noise_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  ImageU8 img(size, size);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_u32(256));
  return img;
}

}  // namespace

TEST_CASE("model: shape contracts across the config matrix") {
  for (int hw : {64, 128}) {
    for (int d : {8, 16}) {
      for (int n : {8, 16}) {
        model::ModelConfig mc;
        mc.feature_channels = d;
        mc.query_count = n;
        mc.init_seed = 5;
        auto params = model::init_params<float>(mc);
        CHECK(params.parameter_count() > 0);

        nn::Graph<float> g;
        auto img = g.constant(model::image_to_tensor<float>(noise_image(hw, 3)));
        auto vars = model::bind_params(g, params, false);
        auto fr = model::forward(g, img, vars, mc);

        const auto& fm = g.value(fr.feature_map);
        CHECK(fm.dim(0) == d);
        CHECK(fm.dim(1) == hw / mc.stride);
        CHECK(fm.dim(2) == hw / mc.stride);

        const auto& filters = g.value(fr.filters);
        CHECK(filters.dim(0) == n);
        CHECK(filters.dim(1) == d + 1);

        const auto& cls = g.value(fr.class_logits);
        CHECK(cls.dim(0) == n);
        CHECK(cls.dim(1) == mc.class_count + 1);

        const auto& masks = g.value(fr.mask_logits);
        CHECK(masks.dim(0) == n);
        CHECK(masks.dim(1) == hw);
        CHECK(masks.dim(2) == hw);
        for (std::size_t i = 0; i < masks.size(); ++i)
          REQUIRE(std::isfinite(masks[i]));
      }
    }
  }
}

TEST_CASE("model: coordinate channels span [-1,1] corner to corner") {
  auto coords = model::coordinate_channels<float>(32, 32);
  CHECK(coords.at(0, 0, 0) == -1.0f);   // y at top-left
  CHECK(coords.at(1, 0, 0) == -1.0f);   // x at top-left
  CHECK(coords.at(0, 31, 31) == 1.0f);  // y at bottom-right
  CHECK(coords.at(1, 31, 31) == 1.0f);

  model::ModelConfig mc;
  mc.init_seed = 1;
  auto params = model::init_params<float>(mc);
  nn::Graph<float> g;
  auto img = g.constant(model::image_to_tensor<float>(noise_image(128, 3)));
  auto vars = model::bind_params(g, params, false);
  auto fr = model::forward(g, img, vars, mc);
  const auto& fm = g.value(fr.feature_map);
  int d = mc.feature_channels;
  CHECK(fm.at(d - 2, 0, 0) == -1.0f);
  CHECK(fm.at(d - 1, 0, 0) == -1.0f);
  CHECK(fm.at(d - 2, 31, 31) == 1.0f);
  CHECK(fm.at(d - 1, 31, 31) == 1.0f);
}

TEST_CASE("model: forward is a pure function of image and parameters") {
  model::ModelConfig mc;
  mc.init_seed = 9;
  auto params = model::init_params<float>(mc);
  ImageU8 img = noise_image(64, 4);

  auto run = [&] {
    nn::Graph<float> g;
    auto vars = model::bind_params(g, params, false);
    auto fr = model::forward(g, g.constant(model::image_to_tensor<float>(img)), vars, mc);
    return g.value(fr.mask_logits);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("model: zeroed head produces identical all-zero filters") {
  model::ModelConfig mc;
  mc.init_seed = 2;
  auto params = model::init_params<float>(mc);
  params.fil1_w.fill(0);
  params.fil1_b.fill(0);
  params.fil2_w.fill(0);
  params.fil2_b.fill(0);

  nn::Graph<float> g;
  auto vars = model::bind_params(g, params, false);
  auto fr = model::forward(g, g.constant(model::image_to_tensor<float>(noise_image(64, 5))),
                           vars, mc);
  const auto& filters = g.value(fr.filters);
  for (std::size_t i = 0; i < filters.size(); ++i) CHECK(filters[i] == 0.0f);
}

TEST_CASE("model: class softmax rows lie on the simplex") {
  model::ModelConfig mc;
  mc.init_seed = 3;
  auto params = model::init_params<float>(mc);
  nn::Graph<float> g;
  auto vars = model::bind_params(g, params, false);
  auto fr = model::forward(g, g.constant(model::image_to_tensor<float>(noise_image(64, 6))),
                           vars, mc);
  auto probs = matching::softmax_rows(g.value(fr.class_logits));
  for (int r = 0; r < probs.dim(0); ++r) {
    float sum = 0;
    for (int c = 0; c < probs.dim(1); ++c) {
      sum += probs.at(r, c);
      CHECK(probs.at(r, c) >= 0.0f);
    }
    CHECK(std::abs(sum - 1.0f) < 1e-6f);
  }
  // Fresh init: the "no object" bias dominates every row.
  for (int r = 0; r < probs.dim(0); ++r) CHECK(probs.at(r, 0) > 0.5f);
}

TEST_CASE("model: non-divisible input dims are a contract error") {
  model::ModelConfig mc;
  mc.init_seed = 1;
  auto params = model::init_params<float>(mc);
  nn::Graph<float> g;
  auto vars = model::bind_params(g, params, false);
  auto img = g.constant(model::image_to_tensor<float>(noise_image(40, 7)));
  CHECK_THROWS_AS(model::forward(g, img, vars, mc), ContractError);
}

TEST_CASE("checkpoint: parameters round-trip bitwise") {
  model::ModelConfig mc;
  mc.feature_channels = 8;
  mc.query_count = 8;
  mc.init_seed = 77;
  auto params = model::init_params<float>(mc);

  auto path = std::filesystem::temp_directory_path() / "uniqseg_test_model.uqs";
  ckpt::save_model(path, params);
  auto back = ckpt::load_model<float>(path);

  CHECK(back.config == params.config);
  bool equal = true;
  std::vector<const nn::Tensor<float>*> a, b;
  params.for_each([&a](const std::string&, const nn::Tensor<float>& t) { a.push_back(&t); });
  back.for_each([&b](const std::string&, const nn::Tensor<float>& t) { b.push_back(&t); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i]->size() == b[i]->size());
    for (std::size_t j = 0; j < a[i]->size(); ++j) equal = equal && (*a[i])[j] == (*b[i])[j];
  }
  CHECK(equal);

  // Wrong precision is an integrity error, missing file is not-found.
  CHECK_THROWS_AS(ckpt::load_model<double>(path), IntegrityError);
  CHECK_THROWS_AS(ckpt::load_model<float>(path.string() + ".nope"), NotFoundError);
}
