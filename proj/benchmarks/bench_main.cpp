// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "uniqseg/evaluator.hpp"
#include "uniqseg/matching.hpp"
#include "uniqseg/model.hpp"
#include "uniqseg/scene.hpp"
#include "uniqseg/trainer.hpp"
#include "uniqseg/transforms.hpp"

using namespace uniqseg;

namespace {

scene::SyntheticScene bench_scene(std::uint64_t seed = 11) {
  scene::SceneSpec spec;
  return scene::generate_scene(seed, spec);
}

model::ModelParams<float> bench_params() {
  model::ModelConfig mc;
  mc.init_seed = 3;
  return model::init_params<float>(mc);
}

}  // namespace

static void BM_SceneGeneration(benchmark::State& state) {
  scene::SceneSpec spec;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(scene::generate_scene(seed++, spec));
  }
}
BENCHMARK(BM_SceneGeneration);

static void BM_ForwardPass(benchmark::State& state) {
  auto params = bench_params();
  auto input = model::image_to_tensor<float>(bench_scene().image);
  for (auto _ : state) {
    nn::Graph<float> g;
    auto vars = model::bind_params(g, params, false);
    auto fr = model::forward(g, g.constant(input), vars, params.config);
    benchmark::DoNotOptimize(g.value(fr.mask_logits).data());
  }
}
BENCHMARK(BM_ForwardPass);

static void BM_ForwardBackward(benchmark::State& state) {
  auto params = bench_params();
  auto sc = bench_scene();
  auto input = model::image_to_tensor<float>(sc.image);
  for (auto _ : state) {
    nn::Graph<float> g;
    auto vars = model::bind_params(g, params, true);
    auto fr = model::forward(g, g.constant(input), vars, params.config);
    matching::Assignment as =
        train::detail::match_scene(g, fr, sc.masks, sc.labels, loss::LossConfig{});
    auto l = loss::intra_mask_loss(g, fr.mask_logits, as, sc.masks, 1e-6f);
    g.backward(l);
    benchmark::DoNotOptimize(g.grad(vars.out_w).data());
  }
}
BENCHMARK(BM_ForwardBackward);

static void BM_TrainStep(benchmark::State& state) {
  auto sc0 = bench_scene(21);
  auto sc1 = bench_scene(22);
  model::ModelConfig mc;
  train::TrainConfig tc;
  tc.threads = 1;
  tc.memory_capacity = 4096;
  auto st = train::TrainState<float>::init(mc, tc);
  std::vector<const scene::SyntheticScene*> batch{&sc0, &sc1};
  for (auto _ : state) {
    benchmark::DoNotOptimize(train::train_step(batch, st, tc));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_InterPairLoss(benchmark::State& state) {
  int pixels = static_cast<int>(state.range(0));
  nn::Tensor<float> filters({16, 17});
  nn::Tensor<float> emb({pixels, 16});
  Rng rng(5);
  for (std::size_t i = 0; i < filters.size(); ++i) filters[i] = rng.uniform(-0.5, 0.5);
  for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = rng.uniform(-1, 1);
  for (auto _ : state) {
    nn::Graph<float> g;
    auto f = g.leaf(filters, true);
    auto logits = g.query_pixel_logits(f, emb);
    auto l = g.pair_loss_zero_target(logits, nn::PairLossKind::Focal, 0.1f, 2.5f);
    g.backward(l);
    benchmark::DoNotOptimize(g.value(l)[0]);
  }
}
BENCHMARK(BM_InterPairLoss)->Arg(1024)->Arg(10000);

static void BM_HungarianMatching(benchmark::State& state) {
  Rng rng(7);
  std::vector<double> cost(6 * 16);
  for (auto& c : cost) c = rng.uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(matching::solve_assignment(cost, 6, 16));
  }
}
BENCHMARK(BM_HungarianMatching);

static void BM_MaskAP(benchmark::State& state) {
  Rng rng(13);
  std::vector<apeval::SceneGroundtruth> gts;
  std::vector<apeval::Detection> dets;
  for (int s = 0; s < 20; ++s) {
    scene::SyntheticScene sc = bench_scene(100 + s);
    gts.push_back({sc.scene_id, sc.masks, sc.labels});
    for (int k = 0; k < sc.instance_count(); ++k)
      dets.push_back({sc.masks[k], sc.labels[k], rng.uniform(0.2, 1.0), sc.scene_id});
  }
  apeval::AreaBands bands = apeval::AreaBands::scaled_for(128, 128);
  for (auto _ : state) {
    benchmark::DoNotOptimize(apeval::evaluate_detections(dets, gts, 4, bands));
  }
}
BENCHMARK(BM_MaskAP);

static void BM_ApplyTransformImage(benchmark::State& state) {
  auto sc = bench_scene();
  geo::TransformSpec crop;
  crop.kind = geo::TransformKind::Crop;
  crop.crop_ratio = 0.75;
  crop.crop_origin_y = 0.125;
  crop.crop_origin_x = 0.0625;
  for (auto _ : state) {
    benchmark::DoNotOptimize(geo::apply_to_image(crop, sc.image, 4));
  }
}
BENCHMARK(BM_ApplyTransformImage);

BENCHMARK_MAIN();
