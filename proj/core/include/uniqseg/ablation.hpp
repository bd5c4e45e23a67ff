// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uniqseg/ap_eval.hpp"
#include "uniqseg/run_config.hpp"

namespace uniqseg::ablate {

/// Named ablation arms. Each arm toggles the two training objectives (the
/// "aug" arm replaces the equivariance branch with plain augmentation).
struct ArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  apeval::APReport report;
  std::filesystem::path run_dir;
};

struct ArmSummary {
  std::string arm;
  double median_ap = 0.0;
  double median_ap50 = 0.0;
  double median_ap75 = 0.0;
  double median_ap_small = 0.0;
  double median_ap_medium = 0.0;
  double median_ap_large = 0.0;
};

struct AblationSummary {
  std::vector<ArmResult> runs;
  std::vector<ArmSummary> arms;  // in requested arm order
  std::filesystem::path table_md;
  std::filesystem::path table_json;
  std::filesystem::path plot_svg;
};

/// Applies one arm's flags to a training configuration.
void apply_arm(const std::string& arm, train::TrainConfig& config);

/// Shared-dataset ablation matrix: arms x seeds runs, each trained and
/// evaluated on identical data. Datasets are generated under out_dir if not
/// already present. Runs execute in parallel processes of the same binary
/// image (std::thread workers; each run is internally deterministic).
AblationSummary run_ablation(const config::RunConfig& base,
                             const std::filesystem::path& out_dir);

}  // namespace uniqseg::ablate
