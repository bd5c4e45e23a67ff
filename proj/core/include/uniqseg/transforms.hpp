// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <string>

#include "uniqseg/autodiff.hpp"
#include "uniqseg/binary_mask.hpp"
#include "uniqseg/errors.hpp"
#include "uniqseg/image.hpp"
#include "uniqseg/rng.hpp"

namespace uniqseg::geo {

enum class TransformKind { Identity, HFlip, Crop, Rotation, Scaling };

std::string kind_name(TransformKind k);
TransformKind kind_from_name(const std::string& name);

/// One sampled group element, applicable to images, masks and feature maps.
/// Crop windows are snapped to the feature-stride grid at sampling time, so
/// crop_ratio/crop_origin always denote stride-aligned pixel windows.
struct TransformSpec {
  TransformKind kind = TransformKind::Identity;
  double crop_ratio = 1.0;     // crop side length / original side
  double crop_origin_y = 0.0;  // normalized top-left offset in [0, 1-ratio]
  double crop_origin_x = 0.0;
  double angle_deg = 0.0;      // rotation extension
  double scale_factor = 1.0;   // scaling extension

  std::string to_json() const;
  static TransformSpec from_json(const std::string& text);

  /// Stride-aligned pixel window for a crop on a size x size image.
  void crop_window(int size, int& y0, int& x0, int& side) const;
};

/// The enabled transformation set. Defaults to {hflip, crop in [0.6, 1.0]};
/// rotation/scaling are optional extensions, off by default.
struct TransformFamily {
  bool enable_identity = false;
  bool enable_hflip = true;
  bool enable_crop = true;
  double crop_ratio_min = 0.6;
  double crop_ratio_max = 1.0;
  bool enable_rotation = false;
  double rotation_min_deg = 0.0;
  double rotation_max_deg = 60.0;
  bool enable_scaling = false;
  double scaling_min = 0.5;
  double scaling_max = 2.0;

  void validate() const;  // at least one kind enabled, sane ranges

  bool operator==(const TransformFamily&) const = default;
};

/// Uniform kind choice among enabled kinds; crop ratio uniform in range and
/// origin uniform over the valid stride-aligned offsets. Deterministic given
/// the generator state.
TransformSpec sample_transform(Rng& rng, const TransformFamily& family, int image_size,
                               int stride);

/// Bilinear-resampled geometric action; output dims equal input dims.
ImageU8 apply_to_image(const TransformSpec& g, const ImageU8& image, int stride);

/// Same geometry with nearest-neighbor resampling; stays binary.
BinaryMask apply_to_mask(const TransformSpec& g, const BinaryMask& mask, int stride);

/// The same geometric action at feature resolution, as a differentiable
/// graph op. Identity returns `fm` itself (exact pass-through). Crop windows
/// must be stride-aligned (guaranteed by sample_transform).
template <typename T>
typename nn::Graph<T>::Var apply_to_feature(nn::Graph<T>& graph,
                                            typename nn::Graph<T>::Var fm,
                                            const TransformSpec& g, int stride) {
  const nn::Tensor<T>& v = graph.value(fm);
  int h = v.dim(1), w = v.dim(2);
  switch (g.kind) {
    case TransformKind::Identity:
      return fm;
    case TransformKind::HFlip:
      return graph.hflip(fm);
    case TransformKind::Crop: {
      int y0 = 0, x0 = 0, side = 0;
      g.crop_window(h * stride, y0, x0, side);
      if (y0 % stride != 0 || x0 % stride != 0 || side % stride != 0)
        throw ContractError("apply_to_feature: crop not aligned to feature stride");
      if (h != w) throw ContractError("apply_to_feature: crop requires square maps");
      return graph.crop_resize_bilinear(fm, y0 / stride, x0 / stride, side / stride,
                                        side / stride, h, w);
    }
    case TransformKind::Rotation: {
      // Inverse rotation about the map center, matching the image action.
      T rad = static_cast<T>(g.angle_deg * 3.14159265358979323846 / 180.0);
      T c = std::cos(rad), s = std::sin(rad);
      T cy = static_cast<T>(h) / T(2), cx = static_cast<T>(w) / T(2);
      std::array<T, 4> mat{c, -s, s, c};
      T tx = cx - (c * cx - s * cy);
      T ty = cy - (s * cx + c * cy);
      return graph.warp_bilinear(fm, mat, ty, tx);
    }
    case TransformKind::Scaling: {
      T inv = static_cast<T>(1.0 / g.scale_factor);
      T cy = static_cast<T>(h) / T(2), cx = static_cast<T>(w) / T(2);
      std::array<T, 4> mat{inv, T(0), T(0), inv};
      return graph.warp_bilinear(fm, mat, cy - inv * cy, cx - inv * cx);
    }
  }
  throw ContractError("apply_to_feature: unknown transform kind");
}

}  // namespace uniqseg::geo
