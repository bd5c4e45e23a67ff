// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/ap_eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "uniqseg/errors.hpp"

namespace uniqseg::apeval {
namespace {

using nlohmann::json;

const std::vector<double>& iou_thresholds() {
  static const std::vector<double> t = [] {
    std::vector<double> v;
    for (int i = 0; i < 10; ++i) v.push_back(0.5 + 0.05 * i);
    return v;
  }();
  return t;
}

constexpr int kRecallPoints = 101;

struct Band {
  double lo, hi;
};

std::vector<Band> bands_for(const AreaBands& b) {
  constexpr double kInf = 1e18;
  return {{0.0, kInf}, {0.0, b.small_max}, {b.small_max, b.medium_max}, {b.medium_max, kInf}};
}

/// Detection order: score desc, mask hash asc, then insertion index. The
/// hash term makes results independent of input permutation.
struct DetRef {
  int index;
  double score;
  std::uint64_t hash;

  bool operator<(const DetRef& o) const {
    if (score != o.score) return score > o.score;
    if (hash != o.hash) return hash < o.hash;
    return index < o.index;
  }
};

struct SceneClassData {
  std::vector<int> gts;                 // indices into flat gt arrays
  std::vector<int> dts;                 // positions into the sorted class list
  std::vector<std::vector<double>> iou; // [local dt][local gt]
};

struct ClassData {
  std::vector<DetRef> dets;                      // globally sorted
  std::map<std::string, SceneClassData> scenes;  // keyed by scene id
  long long gt_total = 0;
};

struct FlatGt {
  const BinaryMask* mask;
  long long area;
};

struct Prepared {
  std::vector<ClassData> per_class;  // index class_id-1
  std::vector<FlatGt> gts;
  const std::vector<Detection>* dets = nullptr;
};

Prepared prepare(const std::vector<Detection>& detections,
                 const std::vector<SceneGroundtruth>& groundtruth, int class_count,
                 double score_threshold, int max_per_scene) {
  Prepared prep;
  prep.dets = &detections;
  prep.per_class.resize(class_count);

  for (const SceneGroundtruth& sg : groundtruth) {
    for (std::size_t k = 0; k < sg.masks.size(); ++k) {
      int label = sg.labels.at(k);
      if (label < 1 || label > class_count)
        throw ContractError("evaluate: groundtruth label out of range");
      int flat = static_cast<int>(prep.gts.size());
      prep.gts.push_back({&sg.masks[k], sg.masks[k].area()});
      ClassData& cd = prep.per_class[label - 1];
      cd.scenes[sg.scene_id].gts.push_back(flat);
      ++cd.gt_total;
    }
  }

  // Confidence threshold and per-scene cap come first, across classes.
  std::map<std::string, std::vector<DetRef>> per_scene;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const Detection& d = detections[i];
    if (d.class_id < 1 || d.class_id > class_count)
      throw ContractError("evaluate: detection class out of range");
    if (d.score < score_threshold) continue;
    per_scene[d.scene_id].push_back({static_cast<int>(i), d.score, d.mask.hash()});
  }
  std::vector<char> kept(detections.size(), 0);
  for (auto& [scene_id, refs] : per_scene) {
    std::sort(refs.begin(), refs.end());
    int cap = std::min<int>(max_per_scene, static_cast<int>(refs.size()));
    for (int i = 0; i < cap; ++i) kept[refs[i].index] = 1;
  }

  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (!kept[i]) continue;
    const Detection& d = detections[i];
    prep.per_class[d.class_id - 1].dets.push_back({static_cast<int>(i), d.score, d.mask.hash()});
  }

  for (int c = 0; c < class_count; ++c) {
    ClassData& cd = prep.per_class[c];
    std::sort(cd.dets.begin(), cd.dets.end());
    for (std::size_t pos = 0; pos < cd.dets.size(); ++pos) {
      const Detection& d = detections[cd.dets[pos].index];
      cd.scenes[d.scene_id].dts.push_back(static_cast<int>(pos));
    }
    for (auto& [scene_id, sc] : cd.scenes) {
      sc.iou.assign(sc.dts.size(), std::vector<double>(sc.gts.size(), 0.0));
      for (std::size_t di = 0; di < sc.dts.size(); ++di) {
        const Detection& d = detections[cd.dets[sc.dts[di]].index];
        for (std::size_t gi = 0; gi < sc.gts.size(); ++gi)
          sc.iou[di][gi] = mask_iou(d.mask, *prep.gts[sc.gts[gi]].mask);
      }
    }
  }
  return prep;
}

/// 101-point interpolated AP from a per-detection TP/ignore labelling.
/// Detections must already be in evaluation (score) order.
double ap_from_flags(const std::vector<char>& tp, const std::vector<char>& ignore,
                     long long npig) {
  std::vector<double> precision, recall;
  long long tps = 0, fps = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (ignore[i]) continue;
    if (tp[i])
      ++tps;
    else
      ++fps;
    precision.push_back(static_cast<double>(tps) / static_cast<double>(tps + fps));
    recall.push_back(static_cast<double>(tps) / static_cast<double>(npig));
  }
  // Precision envelope, then sample at the fixed recall grid.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double sum = 0.0;
  for (int j = 0; j < kRecallPoints; ++j) {
    double r = static_cast<double>(j) / (kRecallPoints - 1);
    auto it = std::lower_bound(recall.begin(), recall.end(), r - 1e-12);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / kRecallPoints;
}

struct PerCell {
  double ap = -1.0;  // -1 = undefined (no groundtruth in band)
};

/// ap[class][band][threshold]
using ApGrid = std::vector<std::vector<std::vector<PerCell>>>;

ApGrid evaluate_grid(const Prepared& prep, const AreaBands& area_bands) {
  const auto& thrs = iou_thresholds();
  auto bands = bands_for(area_bands);
  int class_count = static_cast<int>(prep.per_class.size());
  ApGrid grid(class_count,
              std::vector<std::vector<PerCell>>(bands.size(),
                                                std::vector<PerCell>(thrs.size())));

  for (int c = 0; c < class_count; ++c) {
    const ClassData& cd = prep.per_class[c];
    for (std::size_t b = 0; b < bands.size(); ++b) {
      const Band& band = bands[b];

      long long npig = 0;
      std::map<std::string, std::vector<char>> gt_ignored;
      std::map<std::string, std::vector<std::size_t>> gt_order;  // non-ignored first
      for (const auto& [scene_id, sc] : cd.scenes) {
        std::vector<char>& ign = gt_ignored[scene_id];
        ign.resize(sc.gts.size());
        for (std::size_t gi = 0; gi < sc.gts.size(); ++gi) {
          double a = static_cast<double>(prep.gts[sc.gts[gi]].area);
          ign[gi] = (a < band.lo || a >= band.hi) ? 1 : 0;
          if (!ign[gi]) ++npig;
        }
        std::vector<std::size_t>& order = gt_order[scene_id];
        order.resize(sc.gts.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&ign](std::size_t x, std::size_t y) { return ign[x] < ign[y]; });
      }
      if (npig == 0) continue;  // AP undefined in this cell

      for (std::size_t t = 0; t < thrs.size(); ++t) {
        double thr = thrs[t];
        std::vector<char> tp(cd.dets.size(), 0), ignore(cd.dets.size(), 0);
        for (const auto& [scene_id, sc] : cd.scenes) {
          const std::vector<char>& ign = gt_ignored[scene_id];
          const std::vector<std::size_t>& order = gt_order[scene_id];
          std::vector<char> gt_matched(sc.gts.size(), 0);
          for (std::size_t di = 0; di < sc.dts.size(); ++di) {
            double best = std::min(thr, 1.0 - 1e-10);
            int match = -1;
            for (std::size_t oi = 0; oi < order.size(); ++oi) {
              std::size_t gi = order[oi];
              if (gt_matched[gi] && !ign[gi]) continue;
              // Once a real match exists, ignored groundtruth cannot improve it.
              if (match > -1 && !ign[static_cast<std::size_t>(match)] && ign[gi]) break;
              if (sc.iou[di][gi] < best) continue;
              best = sc.iou[di][gi];
              match = static_cast<int>(gi);
            }
            int pos = sc.dts[di];
            if (match > -1) {
              gt_matched[static_cast<std::size_t>(match)] = 1;
              if (ign[static_cast<std::size_t>(match)])
                ignore[pos] = 1;
              else
                tp[pos] = 1;
            } else {
              double a = static_cast<double>(
                  (*prep.dets)[cd.dets[pos].index].mask.area());
              if (a < band.lo || a >= band.hi) ignore[pos] = 1;
            }
          }
        }
        grid[c][b][t].ap = ap_from_flags(tp, ignore, npig);
      }
    }
  }
  return grid;
}

APReport report_from_grid(const ApGrid& grid) {
  const auto& thrs = iou_thresholds();
  int class_count = static_cast<int>(grid.size());
  APReport r;
  r.per_class.assign(class_count, -1.0);

  auto mean_over = [&](std::size_t band, int threshold_index) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < class_count; ++c) {
      for (std::size_t t = 0; t < thrs.size(); ++t) {
        if (threshold_index >= 0 && static_cast<std::size_t>(threshold_index) != t) continue;
        if (grid[c][band][t].ap < 0) continue;
        sum += grid[c][band][t].ap;
        ++n;
      }
    }
    return n == 0 ? 0.0 : sum / n;
  };

  r.ap = mean_over(0, -1);
  r.ap50 = mean_over(0, 0);
  r.ap75 = mean_over(0, 5);
  r.ap_small = mean_over(1, -1);
  r.ap_medium = mean_over(2, -1);
  r.ap_large = mean_over(3, -1);
  for (int c = 0; c < class_count; ++c) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t t = 0; t < thrs.size(); ++t) {
      if (grid[c][0][t].ap < 0) continue;
      sum += grid[c][0][t].ap;
      ++n;
    }
    r.per_class[c] = n == 0 ? -1.0 : sum / n;
  }
  return r;
}

// ---- oracle ----

/// Enumerates every injective dt->gt matching (iou >= thr) in one scene.
void enumerate_scene(const SceneClassData& sc, const std::vector<char>& gt_ignored, double thr,
                     std::size_t di, std::vector<int>& current,
                     std::vector<std::vector<int>>& out) {
  if (di == sc.dts.size()) {
    out.push_back(current);
    if (out.size() > 300000)
      throw ContractError("evaluate_oracle: matching enumeration too large");
    return;
  }
  current.push_back(-1);  // unmatched
  enumerate_scene(sc, gt_ignored, thr, di + 1, current, out);
  current.pop_back();
  for (std::size_t gi = 0; gi < sc.gts.size(); ++gi) {
    if (sc.iou[di][gi] < std::min(thr, 1.0 - 1e-10)) continue;
    bool used = false;
    for (std::size_t prev = 0; prev < di; ++prev)
      if (current[prev] == static_cast<int>(gi)) used = true;
    if (used) continue;
    current.push_back(static_cast<int>(gi));
    enumerate_scene(sc, gt_ignored, thr, di + 1, current, out);
    current.pop_back();
  }
}

/// Direct (non-envelope) 101-point AP used only by the oracle: for each
/// recall threshold, scan every curve point with recall >= r for the best
/// precision.
double oracle_ap(const std::vector<char>& tp, const std::vector<char>& ignore, long long npig) {
  std::vector<double> precision, recall;
  long long tps = 0, fps = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (ignore[i]) continue;
    if (tp[i])
      ++tps;
    else
      ++fps;
    precision.push_back(static_cast<double>(tps) / static_cast<double>(tps + fps));
    recall.push_back(static_cast<double>(tps) / static_cast<double>(npig));
  }
  double sum = 0.0;
  for (int j = 0; j < kRecallPoints; ++j) {
    double r = static_cast<double>(j) / (kRecallPoints - 1);
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
    sum += best;
  }
  return sum / kRecallPoints;
}

ApGrid oracle_grid(const Prepared& prep, const AreaBands& area_bands) {
  const auto& thrs = iou_thresholds();
  auto bands = bands_for(area_bands);
  int class_count = static_cast<int>(prep.per_class.size());
  ApGrid grid(class_count,
              std::vector<std::vector<PerCell>>(bands.size(),
                                                std::vector<PerCell>(thrs.size())));

  for (int c = 0; c < class_count; ++c) {
    const ClassData& cd = prep.per_class[c];
    for (const auto& [scene_id, sc] : cd.scenes) {
      if (sc.gts.size() > 3 || sc.dts.size() > 5)
        throw ContractError("evaluate_oracle: scene exceeds size limits");
    }
    for (std::size_t b = 0; b < bands.size(); ++b) {
      const Band& band = bands[b];
      long long npig = 0;
      std::map<std::string, std::vector<char>> gt_ignored;
      for (const auto& [scene_id, sc] : cd.scenes) {
        std::vector<char>& ign = gt_ignored[scene_id];
        ign.resize(sc.gts.size());
        for (std::size_t gi = 0; gi < sc.gts.size(); ++gi) {
          double a = static_cast<double>(prep.gts[sc.gts[gi]].area);
          ign[gi] = (a < band.lo || a >= band.hi) ? 1 : 0;
          if (!ign[gi]) ++npig;
        }
      }
      if (npig == 0) continue;

      for (std::size_t t = 0; t < thrs.size(); ++t) {
        double thr = thrs[t];
        // Per-scene matching alternatives.
        std::vector<const SceneClassData*> scene_ptr;
        std::vector<std::vector<std::vector<int>>> scene_options;
        for (const auto& [scene_id, sc] : cd.scenes) {
          std::vector<std::vector<int>> options;
          std::vector<int> current;
          enumerate_scene(sc, gt_ignored[scene_id], thr, 0, current, options);
          scene_ptr.push_back(&sc);
          scene_options.push_back(std::move(options));
        }

        double best_ap = 0.0;
        std::vector<std::size_t> choice(scene_options.size(), 0);
        std::size_t combos = 1;
        for (const auto& o : scene_options) {
          combos *= o.size();
          if (combos > 300000)
            throw ContractError("evaluate_oracle: cross-scene enumeration too large");
        }
        for (std::size_t combo = 0; combo < combos; ++combo) {
          std::size_t rem = combo;
          for (std::size_t s = 0; s < choice.size(); ++s) {
            choice[s] = rem % scene_options[s].size();
            rem /= scene_options[s].size();
          }
          std::vector<char> tp(cd.dets.size(), 0), ignore(cd.dets.size(), 0);
          std::size_t sidx = 0;
          for (const auto& [scene_id, sc] : cd.scenes) {
            const std::vector<int>& m = scene_options[sidx][choice[sidx]];
            const std::vector<char>& ign = gt_ignored[scene_id];
            for (std::size_t di = 0; di < sc.dts.size(); ++di) {
              int pos = sc.dts[di];
              int gi = m[di];
              if (gi >= 0) {
                if (ign[static_cast<std::size_t>(gi)])
                  ignore[pos] = 1;
                else
                  tp[pos] = 1;
              } else {
                double a = static_cast<double>(
                    (*prep.dets)[cd.dets[pos].index].mask.area());
                if (a < band.lo || a >= band.hi) ignore[pos] = 1;
              }
            }
            ++sidx;
          }
          best_ap = std::max(best_ap, oracle_ap(tp, ignore, npig));
        }
        grid[c][b][t].ap = best_ap;
      }
    }
  }
  return grid;
}

}  // namespace

AreaBands AreaBands::scaled_for(int image_height, int image_width) {
  // COCO's 32^2/96^2 are calibrated for ~VGA imagery; rescale by area ratio.
  double ratio = (static_cast<double>(image_height) * image_width) / (640.0 * 480.0);
  AreaBands b;
  b.small_max = 32.0 * 32.0 * ratio;
  b.medium_max = 96.0 * 96.0 * ratio;
  return b;
}

APReport evaluate_detections(const std::vector<Detection>& detections,
                             const std::vector<SceneGroundtruth>& groundtruth, int class_count,
                             const AreaBands& bands, double score_threshold, int max_per_scene) {
  if (groundtruth.empty()) throw ContractError("evaluate: empty groundtruth split");
  Prepared prep = prepare(detections, groundtruth, class_count, score_threshold, max_per_scene);
  return report_from_grid(evaluate_grid(prep, bands));
}

APReport evaluate_oracle(const std::vector<Detection>& detections,
                         const std::vector<SceneGroundtruth>& groundtruth, int class_count,
                         const AreaBands& bands, double score_threshold, int max_per_scene) {
  if (groundtruth.empty()) throw ContractError("evaluate_oracle: empty groundtruth split");
  Prepared prep = prepare(detections, groundtruth, class_count, score_threshold, max_per_scene);
  return report_from_grid(oracle_grid(prep, bands));
}

std::string APReport::to_json() const {
  json j{{"AP", ap},       {"AP50", ap50},       {"AP75", ap75},
         {"AP_S", ap_small}, {"AP_M", ap_medium}, {"AP_L", ap_large},
         {"per_class", per_class}};
  return j.dump();
}

std::string APReport::to_table() const {
  std::ostringstream os;
  os << "  AP     AP50   AP75   AP_S   AP_M   AP_L\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "  %-6.1f %-6.1f %-6.1f %-6.1f %-6.1f %-6.1f\n", ap * 100,
                ap50 * 100, ap75 * 100, ap_small * 100, ap_medium * 100, ap_large * 100);
  os << buf;
  return os.str();
}

}  // namespace uniqseg::apeval
