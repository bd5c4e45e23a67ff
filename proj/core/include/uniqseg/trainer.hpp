// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "uniqseg/checkpoint.hpp"
#include "uniqseg/evaluator.hpp"
#include "uniqseg/losses.hpp"
#include "uniqseg/matching.hpp"
#include "uniqseg/membank.hpp"
#include "uniqseg/model.hpp"
#include "uniqseg/scene.hpp"
#include "uniqseg/transforms.hpp"

namespace uniqseg::train {

enum class OptimizerKind { Sgd, Adam };

/// How the transformed branch is used: the equivariance objective, plain
/// data augmentation (transformed views trained as extra examples), or not
/// at all.
enum class EquiMode { Off, Equivariance, Augmentation };

std::string optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);
std::string equi_mode_name(EquiMode m);
EquiMode equi_mode_from_name(const std::string& name);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  loss::LossConfig loss;
  membank::SamplingStrategy sampling;
  geo::TransformFamily transforms;
  std::size_t memory_capacity = 10000;

  bool inter_enabled = true;
  int inter_warmup_epochs = 0;  // epochs before the inter loss contributes
  EquiMode equi_mode = EquiMode::Equivariance;
  bool share_equi_matching = false;  // reuse the original branch's assignment

  int eval_every = 0;  // epochs between evaluations; 0 = final only
  bool deterministic = true;
  int threads = 0;  // per-batch worker threads; 0 = hardware default

  void validate() const {
    if (epochs < 0) throw ContractError("TrainConfig: epochs must be >= 0");
    if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw ContractError("TrainConfig: learning rate must be > 0");
    if (memory_capacity < 1) throw ContractError("TrainConfig: memory capacity must be >= 1");
    loss.validate();
    sampling.validate();
    transforms.validate();
  }
};

template <typename T>
struct TrainState {
  model::ModelParams<T> params;
  model::ModelParams<T> opt_m;  // SGD momentum buffer / Adam first moment
  model::ModelParams<T> opt_v;  // Adam second moment
  membank::MemoryBank<T> memory;
  std::int64_t step = 0;
  int epoch = 0;
  Rng rng;  // transform + pixel-sampling stream

  static TrainState init(const model::ModelConfig& mconfig, const TrainConfig& tconfig) {
    TrainState s;
    model::ModelConfig mc = mconfig;
    mc.init_seed = tconfig.seed;
    s.params = model::init_params<T>(mc);
    s.opt_m = model::zeros_like(s.params);
    s.opt_v = model::zeros_like(s.params);
    s.memory = membank::MemoryBank<T>(tconfig.memory_capacity, mc.feature_channels);
    s.rng = Rng::derive(tconfig.seed, "train-stream");
    return s;
  }
};

namespace detail {

/// Per-scene outcome of the loss computation phase.
template <typename T>
struct SceneWork {
  loss::LossReport report;
  model::ModelParams<T> grads;
  nn::Tensor<T> feature_values;  // detached copy for memory sampling
  int matched = 0;
};

template <typename T>
matching::Assignment match_scene(nn::Graph<T>& g, const model::ForwardResult<T>& fr,
                                 const std::vector<BinaryMask>& masks,
                                 const std::vector<int>& labels, const loss::LossConfig& cfg) {
  nn::Tensor<T> probs = g.value(fr.mask_logits);
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = nn::stable_sigmoid(probs[i]);
  nn::Tensor<T> class_probs = matching::softmax_rows(g.value(fr.class_logits));
  return matching::match(probs, class_probs, masks, labels, cfg.match_class_weight,
                         cfg.match_dice_weight, cfg.dice_eps);
}

/// Builds the whole per-scene objective graph and backpropagates it.
template <typename T>
SceneWork<T> scene_losses(const scene::SyntheticScene& sc, const model::ModelParams<T>& params,
                          const TrainConfig& config, const membank::Snapshot<T>& snapshot,
                          bool inter_active, const std::optional<geo::TransformSpec>& gspec) {
  const loss::LossConfig& lc = config.loss;
  const model::ModelConfig& mc = params.config;
  nn::Graph<T> g;

  auto img = g.constant(model::image_to_tensor<T>(sc.image));
  auto vars = model::bind_params(g, params, true);
  auto fr = model::forward(g, img, vars, mc);

  matching::Assignment assignment = match_scene(g, fr, sc.masks, sc.labels, lc);

  auto l_cls = loss::classification_loss(g, fr.class_logits, assignment, sc.labels,
                                         static_cast<T>(lc.no_object_weight));
  auto l_intra =
      loss::intra_mask_loss(g, fr.mask_logits, assignment, sc.masks, static_cast<T>(lc.dice_eps));

  auto l_inter = inter_active
                     ? loss::inter_mask_loss(g, fr.filters, snapshot, sc.scene_id, lc)
                     : g.constant(nn::Tensor<T>({1}));

  auto l_equi = g.constant(nn::Tensor<T>({1}));
  std::vector<std::pair<T, typename nn::Graph<T>::Var>> aug_terms;

  if (gspec.has_value() && config.equi_mode != EquiMode::Off) {
    ImageU8 timg = geo::apply_to_image(*gspec, sc.image, mc.stride);
    std::vector<BinaryMask> tmasks;
    tmasks.reserve(sc.masks.size());
    for (const BinaryMask& m : sc.masks) tmasks.push_back(geo::apply_to_mask(*gspec, m, mc.stride));

    auto img_t = g.constant(model::image_to_tensor<T>(timg));
    auto fr_t = model::forward(g, img_t, vars, mc);

    matching::Assignment assignment_t =
        config.share_equi_matching ? assignment
                                   : match_scene(g, fr_t, tmasks, sc.labels, lc);

    if (config.equi_mode == EquiMode::Equivariance) {
      std::vector<const BinaryMask*> tptr;
      tptr.reserve(tmasks.size());
      for (const BinaryMask& m : tmasks) tptr.push_back(&m);
      l_equi = loss::equivariance_loss(g, fr_t.filters, fr.feature_map, *gspec, mc.stride,
                                       assignment_t, tptr, static_cast<T>(lc.dice_eps));
    } else {
      // Augmentation arm: the transformed view trains the classical
      // objective only, with no cross-branch coupling.
      auto aug_cls = loss::classification_loss(g, fr_t.class_logits, assignment_t, sc.labels,
                                               static_cast<T>(lc.no_object_weight));
      auto aug_intra = loss::intra_mask_loss(g, fr_t.mask_logits, assignment_t, tmasks,
                                             static_cast<T>(lc.dice_eps));
      aug_terms.push_back({T(1), aug_cls});
      aug_terms.push_back({T(1), aug_intra});
    }
  }

  SceneWork<T> work;
  auto total = loss::total_objective(g, l_cls, l_intra, l_inter, l_equi, lc, work.report);
  if (!aug_terms.empty()) {
    aug_terms.push_back({T(1), total});
    total = g.affine_sum(aug_terms);
    work.report.cls += static_cast<double>(g.value(aug_terms[0].second)[0]);
    work.report.intra_mask += static_cast<double>(g.value(aug_terms[1].second)[0]);
    work.report.total = static_cast<double>(g.value(total)[0]);
  }

  g.backward(total);
  work.grads = model::zeros_like(params);
  model::accumulate_grads(g, vars, work.grads, T(1));
  work.feature_values = g.value(fr.feature_map);
  work.matched = static_cast<int>(assignment.pairs.size());
  work.report.matched_pairs = work.matched;
  return work;
}

template <typename T>
void apply_update(TrainState<T>& state, const model::ModelParams<T>& grads,
                  const TrainConfig& config) {
  T lr = static_cast<T>(config.learning_rate);
  if (config.optimizer == OptimizerKind::Sgd) {
    T mu = static_cast<T>(config.momentum);
    auto gi = grads;
    // Walk the three parameter sets in lockstep via flat index.
    std::vector<nn::Tensor<T>*> p, m, gv;
    state.params.for_each([&p](const std::string&, nn::Tensor<T>& t) { p.push_back(&t); });
    state.opt_m.for_each([&m](const std::string&, nn::Tensor<T>& t) { m.push_back(&t); });
    gi.for_each([&gv](const std::string&, nn::Tensor<T>& t) { gv.push_back(&t); });
    for (std::size_t a = 0; a < p.size(); ++a)
      for (std::size_t i = 0; i < p[a]->size(); ++i) {
        T v = mu * (*m[a])[i] + (*gv[a])[i];
        (*m[a])[i] = v;
        (*p[a])[i] -= lr * v;
      }
  } else {
    T b1 = static_cast<T>(config.adam_beta1);
    T b2 = static_cast<T>(config.adam_beta2);
    T eps = static_cast<T>(config.adam_eps);
    T t = static_cast<T>(state.step + 1);
    T c1 = T(1) - std::pow(b1, t);
    T c2 = T(1) - std::pow(b2, t);
    auto gi = grads;
    std::vector<nn::Tensor<T>*> p, m, v, gv;
    state.params.for_each([&p](const std::string&, nn::Tensor<T>& x) { p.push_back(&x); });
    state.opt_m.for_each([&m](const std::string&, nn::Tensor<T>& x) { m.push_back(&x); });
    state.opt_v.for_each([&v](const std::string&, nn::Tensor<T>& x) { v.push_back(&x); });
    gi.for_each([&gv](const std::string&, nn::Tensor<T>& x) { gv.push_back(&x); });
    for (std::size_t a = 0; a < p.size(); ++a)
      for (std::size_t i = 0; i < p[a]->size(); ++i) {
        T gr = (*gv[a])[i];
        (*m[a])[i] = b1 * (*m[a])[i] + (T(1) - b1) * gr;
        (*v[a])[i] = b2 * (*v[a])[i] + (T(1) - b2) * gr * gr;
        T mh = (*m[a])[i] / c1;
        T vh = (*v[a])[i] / c2;
        (*p[a])[i] -= lr * mh / (std::sqrt(vh) + eps);
      }
  }
}

}  // namespace detail

/// One optimization step over a batch of scenes:
///  forward both branches, match, compute all objectives against the
///  pre-batch memory snapshot (batch scenes excluded), update parameters,
///  then sample and push this batch's original-branch pixels.
template <typename T>
loss::LossReport train_step(const std::vector<const scene::SyntheticScene*>& batch,
                            TrainState<T>& state, const TrainConfig& config) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  config.validate();

  std::set<std::string> batch_ids;
  for (const scene::SyntheticScene* sc : batch) batch_ids.insert(sc->scene_id);
  bool inter_active = config.inter_enabled && state.epoch >= config.inter_warmup_epochs;
  membank::Snapshot<T> snapshot =
      inter_active ? state.memory.snapshot(batch_ids) : membank::Snapshot<T>{};

  // Transforms are drawn sequentially up front so the generator stream does
  // not depend on worker scheduling.
  std::vector<std::optional<geo::TransformSpec>> specs(batch.size());
  if (config.equi_mode != EquiMode::Off) {
    for (std::size_t i = 0; i < batch.size(); ++i)
      specs[i] = geo::sample_transform(state.rng, config.transforms,
                                       batch[i]->image.height, state.params.config.stride);
  }

  std::vector<detail::SceneWork<T>> work(batch.size());
  int threads = config.threads > 0
                    ? config.threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(batch.size())));

  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      work[i] = detail::scene_losses(*batch[i], state.params, config, snapshot, inter_active,
                                     specs[i]);
  };
  if (threads == 1) {
    run_range(0, batch.size());
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (batch.size() + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      std::size_t lo = static_cast<std::size_t>(t) * chunk;
      std::size_t hi = std::min(batch.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(run_range, lo, hi);
    }
    for (std::thread& th : pool) th.join();
  }

  // Deterministic reduction in batch order.
  model::ModelParams<T> grads = model::zeros_like(state.params);
  loss::LossReport report;
  T scale = T(1) / static_cast<T>(batch.size());
  std::vector<nn::Tensor<T>*> gdst;
  grads.for_each([&gdst](const std::string&, nn::Tensor<T>& t) { gdst.push_back(&t); });
  for (const detail::SceneWork<T>& w : work) {
    std::vector<const nn::Tensor<T>*> gsrc;
    w.grads.for_each(
        [&gsrc](const std::string&, const nn::Tensor<T>& t) { gsrc.push_back(&t); });
    for (std::size_t a = 0; a < gdst.size(); ++a)
      for (std::size_t i = 0; i < gdst[a]->size(); ++i)
        (*gdst[a])[i] += scale * (*gsrc[a])[i];
    report.cls += w.report.cls / batch.size();
    report.intra_mask += w.report.intra_mask / batch.size();
    report.inter_mask += w.report.inter_mask / batch.size();
    report.equi += w.report.equi / batch.size();
    report.total += w.report.total / batch.size();
    report.matched_pairs += w.report.matched_pairs;
  }
  report.memory_pixels = snapshot.size();
  if (!report.finite())
    throw DivergenceError("train_step: non-finite batch loss at step " +
                          std::to_string(state.step));

  detail::apply_update(state, grads, config);
  ++state.step;

  // Push after the loss computation: a scene can never be matched against
  // its own freshly-sampled pixels.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto samples = membank::sample_pixels(work[i].feature_values, *batch[i],
                                          state.params.config.stride, config.sampling,
                                          state.rng, state.step);
    state.memory.push(samples);
  }

  if (!state.params.all_finite())
    throw DivergenceError("train_step: non-finite parameters after update; last good state was "
                          "the previous checkpoint");
  return report;
}

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics_path;
  double best_ap = -1.0;
  double final_ap = -1.0;
  loss::LossReport last_report;
};

namespace detail {

template <typename T>
ckpt::CheckpointData<T> to_checkpoint(const TrainState<T>& state,
                                      const membank::MemoryBank<T>& memory) {
  ckpt::CheckpointData<T> d;
  d.params = state.params;
  d.has_optimizer = true;
  d.opt_m = state.opt_m;
  d.opt_v = state.opt_v;
  d.has_memory = true;
  d.memory_capacity = memory.capacity();
  d.memory_inserted = memory.inserted_total();
  for (std::size_t i = 0; i < memory.size(); ++i) {
    d.memory_provenance.push_back(memory.entry(i));
    const T* e = memory.entry_embedding(i);
    d.memory_embeddings.insert(d.memory_embeddings.end(), e, e + memory.dim());
  }
  d.step = state.step;
  d.epoch = state.epoch;
  d.rng_state = state.rng.state();
  d.rng_stream = state.rng.stream();
  return d;
}

template <typename T>
TrainState<T> from_checkpoint(const ckpt::CheckpointData<T>& d) {
  TrainState<T> s;
  s.params = d.params;
  s.opt_m = d.has_optimizer ? d.opt_m : model::zeros_like(d.params);
  s.opt_v = d.has_optimizer ? d.opt_v : model::zeros_like(d.params);
  if (!d.has_memory) throw IntegrityError("resume: checkpoint has no memory bank");
  s.memory = membank::MemoryBank<T>::restore(d.memory_capacity, d.params.config.feature_channels,
                                             d.memory_embeddings, d.memory_provenance,
                                             d.memory_inserted);
  s.step = d.step;
  s.epoch = d.epoch;
  s.rng.restore(d.rng_state, d.rng_stream);
  return s;
}

inline std::string json_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Full training loop: seeded shuffled batches, periodic evaluation, rolling
/// last/best/final checkpoints, and a JSON-lines metrics log. Resumable from
/// the rolling checkpoint (epoch granularity).
template <typename T>
TrainResult train(const scene::DatasetManifest& trainset,
                  const std::optional<scene::DatasetManifest>& evalset, model::ModelConfig mconfig,
                  const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume = std::nullopt) {
  config.validate();
  mconfig.validate();
  std::filesystem::create_directories(out_dir);

  std::vector<scene::SyntheticScene> scenes = scene::load_all_scenes(trainset);
  if (scenes.empty()) throw ContractError("train: empty dataset");
  std::vector<scene::SyntheticScene> eval_scenes;
  if (evalset.has_value()) eval_scenes = scene::load_all_scenes(*evalset);

  TrainState<T> state;
  if (resume.has_value()) {
    state = detail::from_checkpoint(ckpt::load_checkpoint<T>(*resume));
    if (!(state.params.config == mconfig))
      throw IntegrityError("train: resume checkpoint model config mismatch");
  } else {
    state = TrainState<T>::init(mconfig, config);
  }

  TrainResult result;
  result.metrics_path = out_dir / "metrics.jsonl";
  result.final_checkpoint = out_dir / "checkpoint_final.uqs";
  result.best_checkpoint = out_dir / "checkpoint_best.uqs";
  result.last_checkpoint = out_dir / "checkpoint_last.uqs";

  std::ofstream metrics(result.metrics_path,
                        resume.has_value() ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("train: cannot open metrics log");

  auto write_step_line = [&](const loss::LossReport& r, double wall_ms) {
    metrics << "{\"step\":" << state.step << ",\"epoch\":" << state.epoch
            << ",\"cls\":" << detail::json_double(r.cls)
            << ",\"intra\":" << detail::json_double(r.intra_mask)
            << ",\"inter\":" << detail::json_double(r.inter_mask)
            << ",\"equi\":" << detail::json_double(r.equi)
            << ",\"total\":" << detail::json_double(r.total)
            << ",\"lr\":" << detail::json_double(config.learning_rate)
            << ",\"memory\":" << state.memory.size() << ",\"matched\":" << r.matched_pairs
            << ",\"wall_ms\":" << detail::json_double(config.deterministic ? 0.0 : wall_ms)
            << "}\n";
  };
  auto run_eval = [&](const char* tag) -> double {
    if (eval_scenes.empty()) return -1.0;
    apeval::APReport ap = apeval::evaluate_model(state.params, eval_scenes);
    metrics << "{\"kind\":\"eval\",\"tag\":\"" << tag << "\",\"epoch\":" << state.epoch
            << ",\"step\":" << state.step << ",\"ap\":" << detail::json_double(ap.ap)
            << ",\"ap50\":" << detail::json_double(ap.ap50)
            << ",\"ap75\":" << detail::json_double(ap.ap75) << "}\n";
    return ap.ap;
  };

  if (!resume.has_value())
    ckpt::save_checkpoint(result.last_checkpoint, detail::to_checkpoint(state, state.memory));

  int start_epoch = state.epoch;
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    state.epoch = epoch;
    // Per-epoch shuffle derived from (seed, epoch): resuming at an epoch
    // boundary reproduces the uninterrupted order.
    Rng shuffle = Rng::derive(config.seed + static_cast<std::uint64_t>(epoch) * 0x9e37u,
                              "epoch-shuffle");
    std::vector<int> order(scenes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.uniform_u32(static_cast<std::uint32_t>(i))]);

    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      std::vector<const scene::SyntheticScene*> batch;
      for (std::size_t i = at; i < std::min(order.size(), at + config.batch_size); ++i)
        batch.push_back(&scenes[order[i]]);
      auto t0 = std::chrono::steady_clock::now();
      loss::LossReport r = train_step(batch, state, config);
      double wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      write_step_line(r, wall_ms);
      result.last_report = r;
    }

    state.epoch = epoch + 1;
    ckpt::save_checkpoint(result.last_checkpoint, detail::to_checkpoint(state, state.memory));
    if (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 &&
        epoch + 1 < config.epochs) {
      double ap = run_eval("periodic");
      if (ap > result.best_ap) {
        result.best_ap = ap;
        ckpt::save_checkpoint(result.best_checkpoint, detail::to_checkpoint(state, state.memory));
      }
    }
  }

  result.final_ap = run_eval("final");
  if (result.final_ap >= result.best_ap) {
    result.best_ap = result.final_ap;
    ckpt::save_checkpoint(result.best_checkpoint, detail::to_checkpoint(state, state.memory));
  }
  ckpt::save_checkpoint(result.final_checkpoint, detail::to_checkpoint(state, state.memory));
  metrics.flush();
  if (!metrics) throw IoError("train: metrics log write failed");
  return result;
}

inline std::string optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::Sgd ? "sgd" : "adam";
}

inline OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer: " + name);
}

inline std::string equi_mode_name(EquiMode m) {
  switch (m) {
    case EquiMode::Off: return "off";
    case EquiMode::Equivariance: return "equi";
    case EquiMode::Augmentation: return "aug";
  }
  return "off";
}

inline EquiMode equi_mode_from_name(const std::string& name) {
  if (name == "off") return EquiMode::Off;
  if (name == "equi") return EquiMode::Equivariance;
  if (name == "aug") return EquiMode::Augmentation;
  throw ConfigError("unknown equi mode: " + name);
}

}  // namespace uniqseg::train
