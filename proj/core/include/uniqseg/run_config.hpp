// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uniqseg/model.hpp"
#include "uniqseg/scene.hpp"
#include "uniqseg/trainer.hpp"

namespace uniqseg::config {

/// Complete run configuration: every tunable of the generator, model,
/// objectives, sampling, transforms, memory and training loop, plus paths.
/// Loaded from TOML; unknown sections or keys are rejected by name.
struct RunConfig {
  scene::SceneSpec scene;
  model::ModelConfig model;
  train::TrainConfig train;

  std::filesystem::path data_dir;
  std::filesystem::path eval_data_dir;
  std::filesystem::path out_dir;

  std::vector<std::uint64_t> ablate_seeds = {1, 2, 3};
  std::vector<std::string> ablate_arms = {"baseline", "inter", "equi", "both"};
  int ablate_train_scenes = 500;
  int ablate_eval_scenes = 100;
  std::uint64_t ablate_data_seed = 9000;
  int ablate_jobs = 0;  // parallel runs; 0 = hardware default

  void validate() const;
};

/// Parses and schema-validates a TOML run config. Missing keys keep their
/// defaults; unknown keys throw ConfigError naming the key.
RunConfig load_run_config(const std::filesystem::path& path);

RunConfig parse_run_config(const std::string& toml_text);

/// Serializes the effective configuration back to TOML (round-trips through
/// parse_run_config).
std::string to_toml(const RunConfig& config);

}  // namespace uniqseg::config
