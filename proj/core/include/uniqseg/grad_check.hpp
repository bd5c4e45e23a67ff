// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "uniqseg/losses.hpp"
#include "uniqseg/matching.hpp"
#include "uniqseg/membank.hpp"
#include "uniqseg/model.hpp"
#include "uniqseg/scene.hpp"
#include "uniqseg/trainer.hpp"
#include "uniqseg/transforms.hpp"

namespace uniqseg::train {

struct GradCheckReport {
  std::string loss_name;
  int checked = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

namespace gradcheck_detail {

/// Hand-built two-instance 16x16 scene (the scene generator's floor is
/// 32x32, and gradient checking wants the smallest legal input).
inline scene::SyntheticScene toy_scene(std::uint64_t seed, const std::string& id) {
  scene::SyntheticScene s;
  s.scene_id = id;
  s.seed = seed;
  s.image = ImageU8(16, 16);
  Rng rng = Rng::derive(seed, "gradcheck-image");
  for (auto& px : s.image.pixels) px = static_cast<std::uint8_t>(rng.uniform_u32(256));
  BinaryMask m1(16, 16), m2(16, 16);
  for (int y = 2; y <= 6; ++y)
    for (int x = 2; x <= 6; ++x) m1.set(y, x, true);
  for (int y = 9; y <= 13; ++y)
    for (int x = 8; x <= 12; ++x) m2.set(y, x, true);
  s.masks = {m1, m2};
  s.labels = {1, 2};
  return s;
}

/// Frozen non-differentiated inputs: the matching, the sampled transform and
/// the memory snapshot are all computed once from the base parameters and
/// held constant across finite-difference evaluations, mirroring their
/// constant-within-a-step treatment in training.
template <typename T>
struct Context {
  model::ModelConfig mconfig;
  loss::LossConfig lconfig;
  scene::SyntheticScene scene_a;
  scene::SyntheticScene scene_b;
  membank::Snapshot<T> snapshot;
  matching::Assignment assignment;
  geo::TransformSpec gspec;
  std::vector<BinaryMask> tmasks;
  matching::Assignment assignment_t;
};

template <typename T>
Context<T> make_context(const model::ModelParams<T>& params) {
  Context<T> ctx;
  ctx.mconfig = params.config;
  ctx.scene_a = toy_scene(11, "gradcheck-a");
  ctx.scene_b = toy_scene(23, "gradcheck-b");

  // Memory filled from scene B's features (detached by construction).
  {
    nn::Graph<T> g;
    auto img = g.constant(model::image_to_tensor<T>(ctx.scene_b.image));
    auto vars = model::bind_params(g, params, false);
    auto fr = model::forward(g, img, vars, ctx.mconfig);
    membank::MemoryBank<T> bank(256, ctx.mconfig.feature_channels);
    membank::SamplingStrategy strategy;  // instance-balanced, 50 per instance
    Rng rng = Rng::derive(5, "gradcheck-sampling");
    bank.push(membank::sample_pixels(g.value(fr.feature_map), ctx.scene_b, ctx.mconfig.stride,
                                     strategy, rng, 0));
    ctx.snapshot = bank.snapshot({});
  }

  // Base-parameter forward on scene A for the frozen assignments.
  {
    nn::Graph<T> g;
    auto img = g.constant(model::image_to_tensor<T>(ctx.scene_a.image));
    auto vars = model::bind_params(g, params, false);
    auto fr = model::forward(g, img, vars, ctx.mconfig);
    ctx.assignment = detail::match_scene(g, fr, ctx.scene_a.masks, ctx.scene_a.labels,
                                         ctx.lconfig);
  }

  Rng trng = Rng::derive(7, "gradcheck-transform");
  geo::TransformFamily family;
  ctx.gspec = geo::sample_transform(trng, family, 16, ctx.mconfig.stride);
  for (const BinaryMask& m : ctx.scene_a.masks)
    ctx.tmasks.push_back(geo::apply_to_mask(ctx.gspec, m, ctx.mconfig.stride));
  {
    nn::Graph<T> g;
    ImageU8 timg = geo::apply_to_image(ctx.gspec, ctx.scene_a.image, ctx.mconfig.stride);
    auto img = g.constant(model::image_to_tensor<T>(timg));
    auto vars = model::bind_params(g, params, false);
    auto fr = model::forward(g, img, vars, ctx.mconfig);
    ctx.assignment_t =
        detail::match_scene(g, fr, ctx.tmasks, ctx.scene_a.labels, ctx.lconfig);
  }
  return ctx;
}

/// Builds the named loss end-to-end from parameters. Returns the scalar
/// value; when `grads` is non-null, also backpropagates into it.
template <typename T>
T loss_value(const std::string& name, const model::ModelParams<T>& params, const Context<T>& ctx,
             model::ModelParams<T>* grads) {
  const loss::LossConfig& lc = ctx.lconfig;
  nn::Graph<T> g;
  auto img = g.constant(model::image_to_tensor<T>(ctx.scene_a.image));
  auto vars = model::bind_params(g, params, grads != nullptr);
  auto fr = model::forward(g, img, vars, ctx.mconfig);

  typename nn::Graph<T>::Var out;
  if (name == "focal") {
    // Mask logits vs per-query binary targets from the frozen assignment.
    const nn::Tensor<T>& vz = g.value(fr.mask_logits);
    nn::Tensor<T> target({vz.dim(0), vz.dim(1), vz.dim(2)});
    for (const auto& [pred, gt] : ctx.assignment.pairs) {
      const BinaryMask& m = ctx.scene_a.masks[gt];
      for (int y = 0; y < vz.dim(1); ++y)
        for (int x = 0; x < vz.dim(2); ++x)
          if (m.get(y, x)) target.at(pred, y, x) = T(1);
    }
    out = g.focal_loss(fr.mask_logits, target, static_cast<T>(lc.focal_alpha),
                       static_cast<T>(lc.focal_gamma));
  } else if (name == "dice") {
    // Probability-route dice against the union mask.
    BinaryMask all(ctx.scene_a.image.height, ctx.scene_a.image.width);
    for (const BinaryMask& m : ctx.scene_a.masks) all.or_with(m);
    auto probs = g.sigmoid(fr.mask_logits);
    out = g.dice_pair_mean(probs, {{0, &all}}, static_cast<T>(lc.dice_eps));
  } else if (name == "cls") {
    out = loss::classification_loss(g, fr.class_logits, ctx.assignment, ctx.scene_a.labels,
                                    static_cast<T>(lc.no_object_weight));
  } else if (name == "intra") {
    out = loss::intra_mask_loss(g, fr.mask_logits, ctx.assignment, ctx.scene_a.masks,
                                static_cast<T>(lc.dice_eps));
  } else if (name == "inter") {
    out = loss::inter_mask_loss(g, fr.filters, ctx.snapshot, ctx.scene_a.scene_id, lc);
  } else if (name == "equi" || name == "total") {
    ImageU8 timg = geo::apply_to_image(ctx.gspec, ctx.scene_a.image, ctx.mconfig.stride);
    auto img_t = g.constant(model::image_to_tensor<T>(timg));
    auto fr_t = model::forward(g, img_t, vars, ctx.mconfig);
    std::vector<const BinaryMask*> tptr;
    for (const BinaryMask& m : ctx.tmasks) tptr.push_back(&m);
    auto equi = loss::equivariance_loss(g, fr_t.filters, fr.feature_map, ctx.gspec,
                                        ctx.mconfig.stride, ctx.assignment_t, tptr,
                                        static_cast<T>(lc.dice_eps));
    if (name == "equi") {
      out = equi;
    } else {
      auto cls = loss::classification_loss(g, fr.class_logits, ctx.assignment,
                                           ctx.scene_a.labels, static_cast<T>(lc.no_object_weight));
      auto intra = loss::intra_mask_loss(g, fr.mask_logits, ctx.assignment, ctx.scene_a.masks,
                                         static_cast<T>(lc.dice_eps));
      auto inter = loss::inter_mask_loss(g, fr.filters, ctx.snapshot, ctx.scene_a.scene_id, lc);
      loss::LossReport report;
      out = loss::total_objective(g, cls, intra, inter, equi, lc, report);
    }
  } else {
    throw ContractError("grad_check: unknown loss name: " + name);
  }

  T value = g.value(out)[0];
  if (grads) {
    g.backward(out);
    model::accumulate_grads(g, vars, *grads, T(1));
  }
  return value;
}

}  // namespace gradcheck_detail

/// Compares analytic gradients of the named loss against central finite
/// differences (h = 1e-5) on the downsized double-precision model, over a
/// random subset of at least `min_params` parameters.
inline GradCheckReport grad_check(const std::string& loss_name, double tolerance,
                                  std::uint64_t seed = 17, int min_params = 200) {
  using T = double;
  model::ModelConfig mc;
  mc.feature_channels = 4;
  mc.query_count = 2;
  mc.class_count = 2;
  mc.stride = 4;
  mc.init_seed = seed;
  model::ModelParams<T> params = model::init_params<T>(mc);

  gradcheck_detail::Context<T> ctx = gradcheck_detail::make_context(params);

  model::ModelParams<T> grads = model::zeros_like(params);
  gradcheck_detail::loss_value(loss_name, params, ctx, &grads);

  // Flat views for indexed perturbation.
  std::vector<nn::Tensor<T>*> arrays, garrays;
  params.for_each([&arrays](const std::string&, nn::Tensor<T>& t) { arrays.push_back(&t); });
  grads.for_each([&garrays](const std::string&, nn::Tensor<T>& t) { garrays.push_back(&t); });
  std::size_t total = params.parameter_count();

  std::vector<std::size_t> picks;
  Rng rng = Rng::derive(seed, "gradcheck-picks");
  int want = std::min<std::size_t>(static_cast<std::size_t>(min_params), total);
  std::set<std::size_t> seen;
  while (static_cast<int>(picks.size()) < want) {
    std::size_t i = rng.next_u64() % total;
    if (seen.insert(i).second) picks.push_back(i);
  }

  auto locate = [&](std::size_t flat) {
    std::size_t a = 0;
    while (flat >= arrays[a]->size()) {
      flat -= arrays[a]->size();
      ++a;
    }
    return std::pair<std::size_t, std::size_t>(a, flat);
  };

  GradCheckReport report;
  report.loss_name = loss_name;
  report.tolerance = tolerance;
  const double h = 1e-5;
  for (std::size_t flat : picks) {
    auto [a, i] = locate(flat);
    T saved = (*arrays[a])[i];
    (*arrays[a])[i] = saved + h;
    T up = gradcheck_detail::loss_value<T>(loss_name, params, ctx, nullptr);
    (*arrays[a])[i] = saved - h;
    T down = gradcheck_detail::loss_value<T>(loss_name, params, ctx, nullptr);
    (*arrays[a])[i] = saved;

    double fd = (up - down) / (2.0 * h);
    double an = (*garrays[a])[i];
    double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    double rel = std::abs(fd - an) / denom;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    ++report.checked;
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace uniqseg::train
