// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "uniqseg/binary_mask.hpp"
#include "uniqseg/errors.hpp"
#include "uniqseg/tensor.hpp"

namespace uniqseg::matching {

/// Injective assignment between prediction and groundtruth indices.
/// Exactly min(N,K) pairs, sorted by prediction index; the remaining
/// predictions are listed in `unmatched` (they target "no object").
struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (prediction n, groundtruth k)
  std::vector<int> unmatched;              // prediction indices
};

/// Minimum-cost assignment of all rows to distinct columns (rows <= cols).
/// cost is row-major rows x cols. Returns col_of_row. O(rows * cols^2).
inline std::vector<int> hungarian(const std::vector<double>& cost, int rows, int cols) {
  if (rows == 0) return {};
  if (rows > cols) throw ContractError("hungarian: more rows than columns");
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Potentials-based shortest augmenting path (1-indexed internally).
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<int> p(cols + 1, 0), way(cols + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(cols + 1, kInf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        double cur = cost[static_cast<std::size_t>(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> col_of_row(rows, -1);
  for (int j = 1; j <= cols; ++j)
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

namespace detail {

inline double assignment_cost(const std::vector<double>& cost, int cols,
                              const std::vector<std::pair<int, int>>& pairs) {
  double total = 0.0;
  for (const auto& [pred, gt] : pairs)
    total += cost[static_cast<std::size_t>(gt) * cols + pred];
  return total;
}

/// Optimal completion cost for the still-unassigned groundtruths over the
/// still-free predictions.
inline double completion_cost(const std::vector<double>& cost, int cols,
                              const std::vector<int>& gts, const std::vector<int>& preds) {
  if (gts.empty()) return 0.0;
  std::vector<double> sub(gts.size() * preds.size());
  for (std::size_t r = 0; r < gts.size(); ++r)
    for (std::size_t c = 0; c < preds.size(); ++c)
      sub[r * preds.size() + c] = cost[static_cast<std::size_t>(gts[r]) * cols + preds[c]];
  std::vector<int> col = hungarian(sub, static_cast<int>(gts.size()),
                                   static_cast<int>(preds.size()));
  double total = 0.0;
  for (std::size_t r = 0; r < gts.size(); ++r)
    total += sub[r * preds.size() + col[r]];
  return total;
}

}  // namespace detail

/// Minimum-cost assignment over cost(k,n) with deterministic tie-breaking:
/// among all optimal assignments, the lexicographically least pair list
/// (n-major, k-minor) is returned. cost is K x N row-major, K <= N.
inline Assignment solve_assignment(const std::vector<double>& cost, int gt_count, int pred_count) {
  if (gt_count > pred_count)
    throw CapacityError("solve_assignment: more groundtruth instances than predictions");
  Assignment out;
  if (gt_count == 0) {
    for (int n = 0; n < pred_count; ++n) out.unmatched.push_back(n);
    return out;
  }

  std::vector<int> col = hungarian(cost, gt_count, pred_count);
  std::vector<std::pair<int, int>> best;
  for (int k = 0; k < gt_count; ++k) best.push_back({col[k], k});
  std::sort(best.begin(), best.end());
  double optimal = detail::assignment_cost(cost, pred_count, best);
  double tol = 1e-9 * std::max(1.0, std::abs(optimal));

  // Fix pairs front-to-back: the earliest prediction index with the smallest
  // groundtruth index that still completes to an optimal assignment.
  std::vector<int> free_gts(gt_count);
  for (int k = 0; k < gt_count; ++k) free_gts[k] = k;
  std::vector<char> pred_used(pred_count, 0);
  double fixed_cost = 0.0;

  for (int n = 0; n < pred_count && !free_gts.empty(); ++n) {
    std::vector<int> later_preds;
    for (int m = n + 1; m < pred_count; ++m)
      if (!pred_used[m]) later_preds.push_back(m);

    int chosen = -1;
    for (int k : free_gts) {
      if (static_cast<int>(free_gts.size()) - 1 > static_cast<int>(later_preds.size())) break;
      std::vector<int> rest;
      for (int k2 : free_gts)
        if (k2 != k) rest.push_back(k2);
      double total = fixed_cost + cost[static_cast<std::size_t>(k) * pred_count + n] +
                     detail::completion_cost(cost, pred_count, rest, later_preds);
      if (total <= optimal + tol) {
        chosen = k;
        break;
      }
    }
    if (chosen >= 0) {
      out.pairs.push_back({n, chosen});
      fixed_cost += cost[static_cast<std::size_t>(chosen) * pred_count + n];
      pred_used[n] = 1;
      auto it = std::find(free_gts.begin(), free_gts.end(), chosen);
      if (it != free_gts.end()) free_gts.erase(it);
    }
  }

  for (int n = 0; n < pred_count; ++n)
    if (!pred_used[n]) out.unmatched.push_back(n);
  return out;
}

/// Match cost between the prediction set and groundtruth per the configured
/// weights: cost(n,k) = w_cls * (1 - p_n(c_k)) + w_dice * dice(M_n, M_k).
/// mask_probs: (N,H,W) in [0,1]; class_probs: (N,C+1) rows on the simplex.
/// The groundtruth count must not exceed N. Gradients never flow through the
/// returned assignment; it is recomputed from values every step.
template <typename T>
Assignment match(const nn::Tensor<T>& mask_probs, const nn::Tensor<T>& class_probs,
                 const std::vector<BinaryMask>& gt_masks, const std::vector<int>& gt_labels,
                 double w_cls, double w_dice, double dice_eps) {
  int n = mask_probs.dim(0);
  int k = static_cast<int>(gt_masks.size());
  if (k > n)
    throw CapacityError("match: K=" + std::to_string(k) + " groundtruth instances exceed N=" +
                        std::to_string(n) + " predictions");
  Assignment empty;
  if (k == 0) return solve_assignment({}, 0, n);

  int h = mask_probs.dim(1), w = mask_probs.dim(2);
  std::size_t plane = static_cast<std::size_t>(h) * w;

  // Soft-mask statistics reused across the cost matrix.
  std::vector<double> psq(n, 0.0);
  for (int q = 0; q < n; ++q) {
    const T* p = mask_probs.data() + q * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += static_cast<double>(p[i]) * p[i];
    psq[q] = s;
  }

  std::vector<double> cost(static_cast<std::size_t>(k) * n);
  for (int gt = 0; gt < k; ++gt) {
    const BinaryMask& m = gt_masks[gt];
    if (m.height() != h || m.width() != w) throw ContractError("match: mask shape mismatch");
    double marea = static_cast<double>(m.area());
    int label = gt_labels.at(gt);
    if (label < 1 || label >= class_probs.dim(1))
      throw ContractError("match: groundtruth label out of range");
    for (int q = 0; q < n; ++q) {
      const T* p = mask_probs.data() + q * plane;
      double inter = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (m.get(y, x)) inter += static_cast<double>(p[static_cast<std::size_t>(y) * w + x]);
      double dice = 1.0 - (2.0 * inter + dice_eps) / (psq[q] + marea + dice_eps);
      double cls = 1.0 - static_cast<double>(class_probs.at(q, label));
      cost[static_cast<std::size_t>(gt) * n + q] = w_cls * cls + w_dice * dice;
    }
  }
  return solve_assignment(cost, k, n);
}

/// Row-wise softmax for turning class logits into probabilities.
template <typename T>
nn::Tensor<T> softmax_rows(const nn::Tensor<T>& logits) {
  nn::Tensor<T> out = logits;
  int n = logits.dim(0), m = logits.dim(1);
  for (int r = 0; r < n; ++r) {
    const T* z = &logits.at(r, 0);
    T* o = &out.at(r, 0);
    T mx = z[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, z[j]);
    T sum = T(0);
    for (int j = 0; j < m; ++j) {
      o[j] = std::exp(z[j] - mx);
      sum += o[j];
    }
    for (int j = 0; j < m; ++j) o[j] /= sum;
  }
  return out;
}

}  // namespace uniqseg::matching
