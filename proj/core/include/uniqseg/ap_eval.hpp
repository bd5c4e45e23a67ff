// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "uniqseg/binary_mask.hpp"

namespace uniqseg::apeval {

/// One thresholded prediction ready for evaluation.
struct Detection {
  BinaryMask mask;      // thresholded at 0.5
  int class_id = 0;     // argmax over the real classes
  double score = 0.0;   // that class's probability
  std::string scene_id;
};

struct SceneGroundtruth {
  std::string scene_id;
  std::vector<BinaryMask> masks;
  std::vector<int> labels;
};

/// Mask AP over IoU thresholds 0.50:0.05:0.95 plus the usual breakdowns.
/// Values are fractions in [0,1]; logs display them x100.
struct APReport {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap_small = 0.0;
  double ap_medium = 0.0;
  double ap_large = 0.0;
  std::vector<double> per_class;  // indexed by class_id - 1; -1 when no GT

  std::string to_json() const;
  /// Aligned text table with the standard AP column names.
  std::string to_table() const;
};

/// Area thresholds separating small/medium/large, scaled from the COCO
/// 32^2/96^2 pixel conventions by image-area ratio.
struct AreaBands {
  double small_max = 32.0 * 32.0;
  double medium_max = 96.0 * 96.0;

  static AreaBands scaled_for(int image_height, int image_width);
};

/// Greedy score-ordered matching + 101-point interpolated AP (the COCO
/// convention). Detections below `score_threshold` and beyond the top
/// `max_per_scene` per scene are dropped first.
APReport evaluate_detections(const std::vector<Detection>& detections,
                             const std::vector<SceneGroundtruth>& groundtruth, int class_count,
                             const AreaBands& bands, double score_threshold = 0.05,
                             int max_per_scene = 100);

/// Independent oracle: per threshold/band, exhaustively enumerates every
/// injective detection-groundtruth matching and reports the maximum AP.
/// Preconditions: <= 3 instances and <= 5 detections per scene.
APReport evaluate_oracle(const std::vector<Detection>& detections,
                         const std::vector<SceneGroundtruth>& groundtruth, int class_count,
                         const AreaBands& bands, double score_threshold = 0.05,
                         int max_per_scene = 100);

}  // namespace uniqseg::apeval
