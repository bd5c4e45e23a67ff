// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "uniqseg/autodiff.hpp"
#include "uniqseg/binary_mask.hpp"
#include "uniqseg/errors.hpp"
#include "uniqseg/matching.hpp"
#include "uniqseg/membank.hpp"
#include "uniqseg/scene.hpp"
#include "uniqseg/transforms.hpp"

namespace uniqseg::loss {

using InterLossKind = nn::PairLossKind;

std::string inter_loss_kind_name(InterLossKind k);
InterLossKind inter_loss_kind_from_name(const std::string& name);

struct LossConfig {
  double focal_alpha = 0.1;
  double focal_gamma = 2.5;
  double lambda_equi = 3.0;
  double dice_eps = 1e-6;
  InterLossKind inter_loss_kind = InterLossKind::Focal;
  double match_class_weight = 1.0;  // w_cls
  double match_dice_weight = 1.0;   // w_dice
  double no_object_weight = 0.1;

  void validate() const {
    if (focal_alpha <= 0.0 || focal_alpha >= 1.0)
      throw ContractError("LossConfig: focal_alpha must be in (0,1)");
    if (focal_gamma < 0.0) throw ContractError("LossConfig: focal_gamma must be >= 0");
    if (lambda_equi < 0.0) throw ContractError("LossConfig: lambda_equi must be >= 0");
    if (dice_eps <= 0.0) throw ContractError("LossConfig: dice_eps must be > 0");
    if (no_object_weight <= 0.0) throw ContractError("LossConfig: no_object_weight must be > 0");
  }

  bool operator==(const LossConfig&) const = default;
};

/// Per-step scalar loss values plus bookkeeping counts.
struct LossReport {
  double cls = 0.0;
  double intra_mask = 0.0;
  double inter_mask = 0.0;
  double equi = 0.0;
  double total = 0.0;
  int matched_pairs = 0;
  long long memory_pixels = 0;

  bool finite() const {
    return std::isfinite(cls) && std::isfinite(intra_mask) && std::isfinite(inter_mask) &&
           std::isfinite(equi) && std::isfinite(total);
  }
};

// ---- standalone scalar evaluators (value-only convenience wrappers) ----

/// Mean sigmoid focal loss of `logits` against a same-shape binary target.
template <typename T>
T focal_loss(const nn::Tensor<T>& logits, const nn::Tensor<T>& targets, T alpha, T gamma) {
  nn::Graph<T> g;
  auto z = g.leaf(logits, false);
  return g.value(g.focal_loss(z, targets, alpha, gamma))[0];
}

/// Soft dice loss (V-Net form) between a probability plane and binary mask.
template <typename T>
T dice_loss(const nn::Tensor<T>& probs, const BinaryMask& target, T eps) {
  if (probs.dim(probs.rank() - 2) != target.height() ||
      probs.dim(probs.rank() - 1) != target.width())
    throw ContractError("dice_loss: shape mismatch");
  nn::Graph<T> g;
  nn::Tensor<T> planes({1, target.height(), target.width()});
  std::copy(probs.data(), probs.data() + probs.size(), planes.data());
  auto p = g.leaf(std::move(planes), false);
  return g.value(g.dice_pair_mean(p, {{0, &target}}, eps))[0];
}

// ---- graph-level objectives ----

/// Classification loss: matched queries target their class column, the rest
/// target "no object" (column 0), down-weighted by no_object_weight. Loss is
/// the weighted mean of per-query cross-entropies.
template <typename T>
typename nn::Graph<T>::Var classification_loss(nn::Graph<T>& g,
                                               typename nn::Graph<T>::Var class_logits,
                                               const matching::Assignment& assignment,
                                               const std::vector<int>& labels, T no_object_weight) {
  const nn::Tensor<T>& vz = g.value(class_logits);
  int n = vz.dim(0), m = vz.dim(1);
  std::vector<int> targets(n, 0);
  std::vector<T> weights(n, no_object_weight);
  for (const auto& [pred, gt] : assignment.pairs) {
    int label = labels.at(gt);
    if (label < 1 || label >= m)
      throw ContractError("classification_loss: label out of range: " + std::to_string(label));
    targets[pred] = label;
    weights[pred] = T(1);
  }
  return g.softmax_ce_weighted(class_logits, targets, weights);
}

/// Mean dice over matched (prediction, groundtruth) mask pairs; 0 when the
/// assignment is empty.
template <typename T>
typename nn::Graph<T>::Var intra_mask_loss(nn::Graph<T>& g,
                                           typename nn::Graph<T>::Var mask_logits,
                                           const matching::Assignment& assignment,
                                           const std::vector<BinaryMask>& gt_masks, T dice_eps) {
  std::vector<std::pair<int, const BinaryMask*>> pairs;
  pairs.reserve(assignment.pairs.size());
  for (const auto& [pred, gt] : assignment.pairs) pairs.push_back({pred, &gt_masks.at(gt)});
  return g.dice_logits_pair_mean(mask_logits, pairs, dice_eps);
}

/// Inter-scene instance discrimination: every (query, foreign pixel) logit is
/// trained towards "no match" (target 0) with the configured loss kind.
/// Pixels whose provenance carries the query's own scene id are excluded.
/// Gradients reach the queries only; stored embeddings are plain data.
template <typename T>
typename nn::Graph<T>::Var inter_mask_loss(nn::Graph<T>& g, typename nn::Graph<T>::Var filters,
                                           const membank::Snapshot<T>& snapshot,
                                           const std::string& scene_id, const LossConfig& config) {
  const nn::Tensor<T>& vf = g.value(filters);
  int d = vf.dim(1) - 1;
  if (snapshot.size() != 0 && snapshot.dim() != d)
    throw ContractError("inter_mask_loss: embedding length mismatch");

  // Drop same-scene pixels before forming the logit matrix.
  std::vector<int> keep;
  keep.reserve(snapshot.size());
  for (int i = 0; i < snapshot.size(); ++i)
    if (snapshot.provenance[i].scene_id != scene_id) keep.push_back(i);
  if (keep.empty()) return g.constant(nn::Tensor<T>({1}));

  nn::Tensor<T> foreign({static_cast<int>(keep.size()), d});
  for (std::size_t r = 0; r < keep.size(); ++r)
    std::copy(&snapshot.embeddings.at(keep[r], 0), &snapshot.embeddings.at(keep[r], 0) + d,
              &foreign.at(static_cast<int>(r), 0));

  auto logits = g.query_pixel_logits(filters, foreign);
  return g.pair_loss_zero_target(logits, config.inter_loss_kind,
                                 static_cast<T>(config.focal_alpha),
                                 static_cast<T>(config.focal_gamma));
}

/// Equivariance objective: queries from the transformed image decode the
/// transformed original feature map; the result is dice-matched against the
/// transformed groundtruth masks of the assigned instances. Gradients flow
/// into both the transformed-branch queries and the original feature map.
template <typename T>
typename nn::Graph<T>::Var equivariance_loss(nn::Graph<T>& g,
                                             typename nn::Graph<T>::Var filters_g,
                                             typename nn::Graph<T>::Var feature_map,
                                             const geo::TransformSpec& gspec, int stride,
                                             const matching::Assignment& assignment,
                                             const std::vector<const BinaryMask*>& transformed_gt,
                                             T dice_eps) {
  auto warped = geo::apply_to_feature(g, feature_map, gspec, stride);
  auto decoded = g.decode_queries(filters_g, warped);
  auto logits = g.upsample_bilinear(decoded, stride);
  std::vector<std::pair<int, const BinaryMask*>> pairs;
  pairs.reserve(assignment.pairs.size());
  for (const auto& [pred, gt] : assignment.pairs) pairs.push_back({pred, transformed_gt.at(gt)});
  return g.dice_logits_pair_mean(logits, pairs, dice_eps);
}

/// total = cls + intra + inter + lambda * equi. Throws DivergenceError when
/// any component is non-finite.
template <typename T>
typename nn::Graph<T>::Var total_objective(nn::Graph<T>& g, typename nn::Graph<T>::Var cls,
                                           typename nn::Graph<T>::Var intra,
                                           typename nn::Graph<T>::Var inter,
                                           typename nn::Graph<T>::Var equi, const LossConfig& cfg,
                                           LossReport& report) {
  report.cls = static_cast<double>(g.value(cls)[0]);
  report.intra_mask = static_cast<double>(g.value(intra)[0]);
  report.inter_mask = static_cast<double>(g.value(inter)[0]);
  report.equi = static_cast<double>(g.value(equi)[0]);
  auto total = g.affine_sum({{T(1), cls},
                             {T(1), intra},
                             {T(1), inter},
                             {static_cast<T>(cfg.lambda_equi), equi}});
  report.total = static_cast<double>(g.value(total)[0]);
  if (!report.finite())
    throw DivergenceError("total_objective: non-finite loss (cls=" + std::to_string(report.cls) +
                          " intra=" + std::to_string(report.intra_mask) +
                          " inter=" + std::to_string(report.inter_mask) +
                          " equi=" + std::to_string(report.equi) + ")");
  return total;
}

inline std::string inter_loss_kind_name(InterLossKind k) {
  switch (k) {
    case InterLossKind::Focal: return "focal";
    case InterLossKind::L1: return "l1";
    case InterLossKind::L2: return "l2";
    case InterLossKind::CrossEntropy: return "cross_entropy";
  }
  return "focal";
}

inline InterLossKind inter_loss_kind_from_name(const std::string& name) {
  if (name == "focal") return InterLossKind::Focal;
  if (name == "l1") return InterLossKind::L1;
  if (name == "l2") return InterLossKind::L2;
  if (name == "cross_entropy") return InterLossKind::CrossEntropy;
  throw ConfigError("unknown inter_loss_kind: " + name);
}

}  // namespace uniqseg::loss
