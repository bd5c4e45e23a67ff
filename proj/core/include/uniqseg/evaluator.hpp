// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "uniqseg/ap_eval.hpp"
#include "uniqseg/matching.hpp"
#include "uniqseg/model.hpp"
#include "uniqseg/scene.hpp"

namespace uniqseg::apeval {

/// Thresholded detections from one forward pass: mask at probability 0.5
/// (logit 0), class by argmax over the real classes, score that class's
/// softmax probability.
template <typename T>
std::vector<Detection> extract_detections(const model::ModelParams<T>& params,
                                          const scene::SyntheticScene& s) {
  nn::Graph<T> g;
  auto img = g.constant(model::image_to_tensor<T>(s.image));
  auto vars = model::bind_params(g, params, false);
  auto fr = model::forward(g, img, vars, params.config);

  const nn::Tensor<T>& logits = g.value(fr.mask_logits);
  nn::Tensor<T> class_probs = matching::softmax_rows(g.value(fr.class_logits));

  int n = params.config.query_count;
  int h = logits.dim(1), w = logits.dim(2);
  std::size_t plane = static_cast<std::size_t>(h) * w;

  std::vector<Detection> out;
  out.reserve(n);
  for (int q = 0; q < n; ++q) {
    Detection d;
    d.scene_id = s.scene_id;
    d.class_id = 1;
    double best = static_cast<double>(class_probs.at(q, 1));
    for (int c = 2; c <= params.config.class_count; ++c) {
      double p = static_cast<double>(class_probs.at(q, c));
      if (p > best) {
        best = p;
        d.class_id = c;
      }
    }
    d.score = best;
    d.mask = BinaryMask(h, w);
    const T* z = logits.data() + q * plane;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (z[static_cast<std::size_t>(y) * w + x] >= T(0)) d.mask.set(y, x, true);
    out.push_back(std::move(d));
  }
  return out;
}

/// Mask AP of a model over a set of scenes.
template <typename T>
APReport evaluate_model(const model::ModelParams<T>& params,
                        const std::vector<scene::SyntheticScene>& scenes) {
  if (scenes.empty()) throw ContractError("evaluate_model: empty split");
  std::vector<Detection> detections;
  std::vector<SceneGroundtruth> groundtruth;
  for (const scene::SyntheticScene& s : scenes) {
    auto dets = extract_detections(params, s);
    detections.insert(detections.end(), std::make_move_iterator(dets.begin()),
                      std::make_move_iterator(dets.end()));
    groundtruth.push_back({s.scene_id, s.masks, s.labels});
  }
  AreaBands bands = AreaBands::scaled_for(scenes[0].image.height, scenes[0].image.width);
  return evaluate_detections(detections, groundtruth, params.config.class_count, bands);
}

}  // namespace uniqseg::apeval
