// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "uniqseg/grad_check.hpp"
#include "uniqseg/trainer.hpp"

using namespace uniqseg;
namespace fs = std::filesystem;

namespace {

scene::SceneSpec small_spec() {
  scene::SceneSpec spec;
  spec.image_size = 32;
  spec.min_instances = 1;
  spec.max_instances = 3;
  spec.min_instance_area = 16;
  return spec;
}

model::ModelConfig small_model() {
  model::ModelConfig mc;
  mc.feature_channels = 8;
  mc.query_count = 4;
  mc.stride = 4;
  return mc;
}

train::TrainConfig small_train() {
  train::TrainConfig tc;
  tc.batch_size = 2;
  tc.memory_capacity = 512;
  tc.threads = 1;
  return tc;
}

std::vector<std::string> step_lines(const fs::path& metrics) {
  std::vector<std::string> out;
  std::ifstream f(metrics);
  std::string line;
  while (std::getline(f, line))
    if (line.find("\"kind\"") == std::string::npos) out.push_back(line);
  return out;
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("uniqseg_trainer_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("train_step: disabled objectives report exact zeros") {
  auto spec = small_spec();
  std::vector<scene::SyntheticScene> scenes;
  for (int i = 0; i < 2; ++i) scenes.push_back(scene::generate_scene(40 + i, spec));
  std::vector<const scene::SyntheticScene*> batch{&scenes[0], &scenes[1]};

  auto tc = small_train();
  tc.inter_enabled = false;
  tc.equi_mode = train::EquiMode::Off;
  auto state = train::TrainState<float>::init(small_model(), tc);
  loss::LossReport r = train::train_step(batch, state, tc);
  CHECK(r.inter_mask == 0.0);
  CHECK(r.equi == 0.0);
  CHECK(r.cls > 0.0);
  CHECK(r.total == doctest::Approx(r.cls + r.intra_mask).epsilon(1e-6));
}

TEST_CASE("train_step: deterministic given identical state") {
  auto spec = small_spec();
  std::vector<scene::SyntheticScene> scenes;
  for (int i = 0; i < 3; ++i) scenes.push_back(scene::generate_scene(60 + i, spec));
  std::vector<const scene::SyntheticScene*> batch{&scenes[0], &scenes[1], &scenes[2]};

  auto tc = small_train();
  auto s1 = train::TrainState<float>::init(small_model(), tc);
  auto s2 = s1;  // value semantics: full state copy

  loss::LossReport r1 = train::train_step(batch, s1, tc);
  loss::LossReport r2 = train::train_step(batch, s2, tc);
  CHECK(r1.total == r2.total);
  CHECK(r1.cls == r2.cls);
  CHECK(r1.intra_mask == r2.intra_mask);
  CHECK(r1.equi == r2.equi);
  CHECK(s1.memory.size() == s2.memory.size());

  // And multi-threaded workers reduce in the same fixed order.
  auto s3 = train::TrainState<float>::init(small_model(), tc);
  auto tc3 = tc;
  tc3.threads = 3;
  loss::LossReport r3 = train::train_step(batch, s3, tc3);
  CHECK(r3.total == r1.total);
}

TEST_CASE("train_step: a scene never matches its own freshly pushed pixels") {
  auto spec = small_spec();
  scene::SyntheticScene a = scene::generate_scene(80, spec);
  scene::SyntheticScene b = scene::generate_scene(81, spec);

  auto tc = small_train();
  tc.equi_mode = train::EquiMode::Off;
  tc.batch_size = 1;

  // State 1: memory holds only foreign scene b.
  auto s1 = train::TrainState<float>::init(small_model(), tc);
  {
    nn::Graph<float> g;
    auto vars = model::bind_params(g, s1.params, false);
    auto fr = model::forward(g, g.constant(model::image_to_tensor<float>(b.image)), vars,
                             s1.params.config);
    Rng r(1);
    s1.memory.push(membank::sample_pixels(g.value(fr.feature_map), b, 4, tc.sampling, r, 0));
  }
  auto s2 = s1;  // state 2 additionally holds scene a's own pixels
  {
    nn::Graph<float> g;
    auto vars = model::bind_params(g, s2.params, false);
    auto fr = model::forward(g, g.constant(model::image_to_tensor<float>(a.image)), vars,
                             s2.params.config);
    Rng r(2);
    s2.memory.push(membank::sample_pixels(g.value(fr.feature_map), a, 4, tc.sampling, r, 0));
  }

  std::vector<const scene::SyntheticScene*> batch{&a};
  loss::LossReport r1 = train::train_step(batch, s1, tc);
  loss::LossReport r2 = train::train_step(batch, s2, tc);
  CHECK(r1.inter_mask == r2.inter_mask);  // own pixels excluded either way
  CHECK(r1.inter_mask > 0.0);
}

TEST_CASE("train_step: inter warm-up gates the loss by epoch") {
  auto spec = small_spec();
  scene::SyntheticScene a = scene::generate_scene(90, spec);
  scene::SyntheticScene b = scene::generate_scene(91, spec);
  std::vector<const scene::SyntheticScene*> batch{&a};

  auto tc = small_train();
  tc.equi_mode = train::EquiMode::Off;
  tc.inter_warmup_epochs = 2;
  auto state = train::TrainState<float>::init(small_model(), tc);
  {
    nn::Graph<float> g;
    auto vars = model::bind_params(g, state.params, false);
    auto fr = model::forward(g, g.constant(model::image_to_tensor<float>(b.image)), vars,
                             state.params.config);
    Rng r(1);
    state.memory.push(membank::sample_pixels(g.value(fr.feature_map), b, 4, tc.sampling, r, 0));
  }
  auto warm = state;
  state.epoch = 0;
  CHECK(train::train_step(batch, state, tc).inter_mask == 0.0);
  warm.epoch = 2;
  CHECK(train::train_step(batch, warm, tc).inter_mask > 0.0);
}

TEST_CASE("train: epochs=0 writes checkpoints and no step lines") {
  fs::path dir = temp_dir("e0");
  auto manifest = scene::render_dataset(4, small_spec(), dir / "data", 5);
  auto tc = small_train();
  tc.epochs = 0;
  auto result = train::train<float>(manifest, std::nullopt, small_model(), tc, dir / "run");
  CHECK(fs::exists(result.final_checkpoint));
  CHECK(fs::exists(result.last_checkpoint));
  CHECK(step_lines(result.metrics_path).empty());
}

TEST_CASE("train: overfitting a single scene reduces the mask loss") {
  fs::path dir = temp_dir("overfit");
  auto manifest = scene::render_dataset(1, small_spec(), dir / "data", 77);

  auto tc = small_train();
  tc.batch_size = 1;
  tc.epochs = 200;  // 1 scene -> 200 steps
  tc.inter_enabled = false;
  tc.equi_mode = train::EquiMode::Off;
  tc.optimizer = train::OptimizerKind::Adam;
  tc.learning_rate = 0.002;
  auto result = train::train<float>(manifest, std::nullopt, small_model(), tc, dir / "run");

  auto lines = step_lines(result.metrics_path);
  REQUIRE(lines.size() == 200);
  auto intra_of = [](const std::string& line) {
    auto at = line.find("\"intra\":");
    return std::stod(line.substr(at + 8));
  };
  CHECK(intra_of(lines.back()) < intra_of(lines.front()));
  CHECK(result.last_report.intra_mask < 0.5 * intra_of(lines.front()));
}

TEST_CASE("train: resume from the rolling checkpoint replays the run") {
  fs::path dir = temp_dir("resume");
  auto manifest = scene::render_dataset(6, small_spec(), dir / "data", 9);

  auto tc = small_train();
  tc.epochs = 3;

  auto full = train::train<float>(manifest, std::nullopt, small_model(), tc, dir / "full");

  auto tc1 = tc;
  tc1.epochs = 2;
  train::train<float>(manifest, std::nullopt, small_model(), tc1, dir / "part");
  auto resumed = train::train<float>(manifest, std::nullopt, small_model(), tc, dir / "part",
                                     dir / "part" / "checkpoint_last.uqs");

  auto a = step_lines(full.metrics_path);
  auto b = step_lines(resumed.metrics_path);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("train: parameters stay finite over fuzzed short runs") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    auto spec = small_spec();
    std::vector<scene::SyntheticScene> scenes;
    for (int i = 0; i < 4; ++i)
      scenes.push_back(scene::generate_scene(seed * 100 + i, spec));

    auto tc = small_train();
    tc.seed = seed;
    tc.learning_rate = 0.05;  // deliberately aggressive
    auto state = train::TrainState<float>::init(small_model(), tc);
    for (int step = 0; step < 100; ++step) {
      std::vector<const scene::SyntheticScene*> batch{&scenes[step % 4],
                                                      &scenes[(step + 1) % 4]};
      train::train_step(batch, state, tc);
      REQUIRE(state.params.all_finite());
    }
  }
}

TEST_CASE("grad_check: named losses pass, bogus name throws") {
  auto dice = train::grad_check("dice", 1e-4, 17, 60);
  CHECK(dice.passed);
  auto total = train::grad_check("total", 1e-4, 17, 60);
  CHECK(total.passed);
  CHECK_THROWS_AS(train::grad_check("bogus", 1e-4), ContractError);
}
