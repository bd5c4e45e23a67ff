// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "uniqseg/errors.hpp"
#include "uniqseg/image.hpp"
#include "uniqseg/rng.hpp"
#include "uniqseg/scene.hpp"
#include "uniqseg/tensor.hpp"

namespace uniqseg::membank {

enum class SamplingKind { Dense, Sparse, InstanceBalanced };

std::string sampling_kind_name(SamplingKind k);
SamplingKind sampling_kind_from_name(const std::string& name);

struct SamplingStrategy {
  SamplingKind kind = SamplingKind::InstanceBalanced;
  int pixels_per_image = 512;    // sparse
  int pixels_per_instance = 50;  // instance-balanced

  void validate() const {
    if (pixels_per_image < 1 || pixels_per_instance < 1)
      throw ContractError("SamplingStrategy: pixel counts must be positive");
  }

  bool operator==(const SamplingStrategy&) const = default;
};

/// One stored foreground pixel embedding with provenance. Embeddings are
/// plain copied values; nothing in the bank participates in any gradient
/// graph.
template <typename T>
struct PixelSample {
  std::vector<T> embedding;
  std::string scene_id;
  int instance_id = 0;  // >= 1; background is never stored
  int class_id = 0;
  std::int64_t step_added = 0;
};

struct Provenance {
  std::string scene_id;
  int instance_id = 0;
  int class_id = 0;
  std::int64_t step_added = 0;

  bool operator==(const Provenance&) const = default;
};

/// Read-only copy of bank contents (already filtered by scene exclusion).
template <typename T>
struct Snapshot {
  nn::Tensor<T> embeddings;  // (P, D); empty tensor when P == 0
  std::vector<Provenance> provenance;

  int size() const { return static_cast<int>(provenance.size()); }
  int dim() const { return size() == 0 ? 0 : embeddings.dim(1); }
};

/// Bounded FIFO queue of detached pixel embeddings (fixed-size ring; evicted
/// slots are overwritten in place).
template <typename T>
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t capacity, int dim) : capacity_(capacity), dim_(dim) {
    if (capacity == 0 || dim <= 0) throw ContractError("MemoryBank: bad capacity/dim");
    embeddings_.resize(capacity * static_cast<std::size_t>(dim));
    provenance_.resize(capacity);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  int dim() const { return dim_; }
  std::int64_t inserted_total() const { return inserted_; }

  /// Appends samples; evicts the oldest entries beyond capacity (strict
  /// FIFO). Embedding lengths must match the bank dimension.
  void push(const std::vector<PixelSample<T>>& samples) {
    for (const PixelSample<T>& s : samples) {
      if (static_cast<int>(s.embedding.size()) != dim_)
        throw ContractError("MemoryBank::push: embedding length mismatch");
      if (s.instance_id < 1)
        throw ContractError("MemoryBank::push: background sample (instance_id < 1)");
      std::size_t slot = (head_ + size_) % capacity_;
      if (size_ == capacity_) {  // overwrite the oldest entry
        slot = head_;
        head_ = (head_ + 1) % capacity_;
        --size_;
      }
      provenance_[slot] = {s.scene_id, s.instance_id, s.class_id, s.step_added};
      std::copy(s.embedding.begin(), s.embedding.end(),
                embeddings_.begin() + slot * static_cast<std::size_t>(dim_));
      ++size_;
      ++inserted_;
    }
  }

  /// i-th entry in FIFO order (0 = oldest).
  const Provenance& entry(std::size_t i) const { return provenance_[(head_ + i) % capacity_]; }

  const T* entry_embedding(std::size_t i) const {
    return embeddings_.data() + ((head_ + i) % capacity_) * static_cast<std::size_t>(dim_);
  }

  /// Contiguous copy of all entries whose scene_id is not excluded,
  /// oldest first.
  Snapshot<T> snapshot(const std::set<std::string>& exclude_scene_ids) const {
    Snapshot<T> out;
    std::vector<std::size_t> keep;
    keep.reserve(size_);
    for (std::size_t i = 0; i < size_; ++i)
      if (!exclude_scene_ids.contains(entry(i).scene_id)) keep.push_back(i);
    if (keep.empty()) return out;
    out.embeddings = nn::Tensor<T>({static_cast<int>(keep.size()), dim_});
    out.provenance.reserve(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
      const T* src = entry_embedding(keep[r]);
      std::copy(src, src + dim_, &out.embeddings.at(static_cast<int>(r), 0));
      out.provenance.push_back(entry(keep[r]));
    }
    return out;
  }

  /// Rebuilds a bank from checkpointed storage (entries oldest-first).
  static MemoryBank restore(std::size_t capacity, int dim, const std::vector<T>& embeddings,
                            const std::vector<Provenance>& provenance, std::int64_t inserted) {
    MemoryBank b(capacity, dim);
    if (embeddings.size() != provenance.size() * static_cast<std::size_t>(dim))
      throw IntegrityError("MemoryBank::restore: size mismatch");
    if (provenance.size() > capacity) throw IntegrityError("MemoryBank::restore: over capacity");
    std::copy(embeddings.begin(), embeddings.end(), b.embeddings_.begin());
    std::copy(provenance.begin(), provenance.end(), b.provenance_.begin());
    b.size_ = provenance.size();
    b.inserted_ = inserted;
    return b;
  }

 private:
  std::size_t capacity_ = 0;
  int dim_ = 0;
  std::size_t head_ = 0;  // index of the oldest entry
  std::size_t size_ = 0;
  std::vector<T> embeddings_;  // capacity * dim ring storage
  std::vector<Provenance> provenance_;
  std::int64_t inserted_ = 0;
};

/// Majority-vote downsampling of instance masks to feature resolution: each
/// stride x stride cell takes the instance (or background, id 0) owning the
/// most pixels in it; ties go to the smaller id.
inline LabelMap downsample_majority(const std::vector<BinaryMask>& masks, int stride) {
  if (masks.empty()) return LabelMap(0, 0);
  int h = masks[0].height(), w = masks[0].width();
  if (h % stride != 0 || w % stride != 0)
    throw ContractError("downsample_majority: dims not divisible by stride");
  int fh = h / stride, fw = w / stride;
  LabelMap out(fh, fw);
  std::vector<int> counts(masks.size() + 1);
  for (int cy = 0; cy < fh; ++cy) {
    for (int cx = 0; cx < fw; ++cx) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int y = cy * stride; y < (cy + 1) * stride; ++y) {
        for (int x = cx * stride; x < (cx + 1) * stride; ++x) {
          int label = 0;
          for (std::size_t k = 0; k < masks.size(); ++k) {
            if (masks[k].get(y, x)) {
              label = static_cast<int>(k) + 1;
              break;  // masks are non-overlapping
            }
          }
          ++counts[label];
        }
      }
      int best = 0;
      for (std::size_t l = 1; l < counts.size(); ++l)
        if (counts[l] > counts[best]) best = static_cast<int>(l);
      out.at(cy, cx) = static_cast<std::uint16_t>(best);
    }
  }
  return out;
}

/// Draws foreground feature-cell embeddings per the strategy. Embeddings are
/// detached copies of feature-map columns; background cells never appear.
/// Deterministic given the generator state.
template <typename T>
std::vector<PixelSample<T>> sample_pixels(const nn::Tensor<T>& feature_values,
                                          const scene::SyntheticScene& scene, int stride,
                                          const SamplingStrategy& strategy, Rng& rng,
                                          std::int64_t step) {
  strategy.validate();
  std::vector<PixelSample<T>> out;
  if (scene.masks.empty()) return out;

  int d = feature_values.dim(0);
  int fh = feature_values.dim(1), fw = feature_values.dim(2);
  LabelMap cells = downsample_majority(scene.masks, stride);
  if (cells.height != fh || cells.width != fw)
    throw ContractError("sample_pixels: feature map does not match scene dims");

  // Foreground cells grouped per instance, in scan order.
  std::vector<std::vector<int>> cells_of(scene.masks.size());
  for (int i = 0; i < fh * fw; ++i) {
    int label = cells.labels[i];
    if (label > 0) cells_of[label - 1].push_back(i);
  }

  std::size_t plane = static_cast<std::size_t>(fh) * fw;
  auto emit = [&](int cell, int instance) {
    PixelSample<T> s;
    s.embedding.resize(d);
    for (int c = 0; c < d; ++c) s.embedding[c] = feature_values[c * plane + cell];
    s.scene_id = scene.scene_id;
    s.instance_id = instance + 1;
    s.class_id = scene.labels[instance];
    s.step_added = step;
    out.push_back(std::move(s));
  };

  // Uniform draw of `take` cells without replacement (partial Fisher-Yates).
  auto draw = [&rng](std::vector<int>& pool, int take) {
    take = std::min<int>(take, static_cast<int>(pool.size()));
    for (int i = 0; i < take; ++i) {
      int j = i + static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(pool.size() - i)));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(take);
  };

  switch (strategy.kind) {
    case SamplingKind::Dense:
      for (std::size_t k = 0; k < cells_of.size(); ++k)
        for (int cell : cells_of[k]) emit(cell, static_cast<int>(k));
      break;
    case SamplingKind::Sparse: {
      std::vector<std::pair<int, int>> all;  // (cell, instance)
      for (std::size_t k = 0; k < cells_of.size(); ++k)
        for (int cell : cells_of[k]) all.push_back({cell, static_cast<int>(k)});
      int take = std::min<int>(strategy.pixels_per_image, static_cast<int>(all.size()));
      for (int i = 0; i < take; ++i) {
        int j = i + static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(all.size() - i)));
        std::swap(all[i], all[j]);
      }
      for (int i = 0; i < take; ++i) emit(all[i].first, all[i].second);
      break;
    }
    case SamplingKind::InstanceBalanced:
      for (std::size_t k = 0; k < cells_of.size(); ++k) {
        std::vector<int> pool = cells_of[k];
        draw(pool, strategy.pixels_per_instance);
        for (int cell : pool) emit(cell, static_cast<int>(k));
      }
      break;
  }
  return out;
}

inline std::string sampling_kind_name(SamplingKind k) {
  switch (k) {
    case SamplingKind::Dense: return "dense";
    case SamplingKind::Sparse: return "sparse";
    case SamplingKind::InstanceBalanced: return "instance_balanced";
  }
  return "instance_balanced";
}

inline SamplingKind sampling_kind_from_name(const std::string& name) {
  if (name == "dense") return SamplingKind::Dense;
  if (name == "sparse") return SamplingKind::Sparse;
  if (name == "instance_balanced") return SamplingKind::InstanceBalanced;
  throw ConfigError("unknown sampling kind: " + name);
}

}  // namespace uniqseg::membank
