// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/transforms.hpp"

#include <algorithm>

#include <json.hpp>

namespace uniqseg::geo {
namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

/// Shared inverse-map sampler: for output pixel (oy,ox) returns the source
/// position in input pixel coordinates (half-pixel convention), or false
/// when the source is outside the input (rotation/scaling padding).
struct InverseMap {
  // affine: src = A * out + t, in pixel-center coordinates
  double a00 = 1, a01 = 0, a10 = 0, a11 = 1, ty = 0, tx = 0;

  void source(double oy, double ox, double& sy, double& sx) const {
    double py = oy + 0.5, px = ox + 0.5;
    sx = a00 * px + a01 * py + tx - 0.5;
    sy = a10 * px + a11 * py + ty - 0.5;
  }
};

InverseMap inverse_map_for(const TransformSpec& g, int size) {
  InverseMap m;
  switch (g.kind) {
    case TransformKind::Identity:
    case TransformKind::HFlip:
      break;  // handled separately
    case TransformKind::Crop: {
      int y0 = 0, x0 = 0, side = 0;
      g.crop_window(size, y0, x0, side);
      double scale = static_cast<double>(side) / size;
      m.a00 = scale;
      m.a11 = scale;
      m.tx = x0;
      m.ty = y0;
      break;
    }
    case TransformKind::Rotation: {
      double rad = g.angle_deg * kPi / 180.0;
      double c = std::cos(rad), s = std::sin(rad);
      double cy = size / 2.0, cx = size / 2.0;
      m.a00 = c;
      m.a01 = -s;
      m.a10 = s;
      m.a11 = c;
      m.tx = cx - (c * cx - s * cy);
      m.ty = cy - (s * cx + c * cy);
      break;
    }
    case TransformKind::Scaling: {
      double inv = 1.0 / g.scale_factor;
      double cy = size / 2.0, cx = size / 2.0;
      m.a00 = inv;
      m.a11 = inv;
      m.tx = cx - inv * cx;
      m.ty = cy - inv * cy;
      break;
    }
  }
  return m;
}

}  // namespace

std::string kind_name(TransformKind k) {
  switch (k) {
    case TransformKind::Identity: return "identity";
    case TransformKind::HFlip: return "hflip";
    case TransformKind::Crop: return "crop";
    case TransformKind::Rotation: return "rotation";
    case TransformKind::Scaling: return "scaling";
  }
  return "identity";
}

TransformKind kind_from_name(const std::string& name) {
  if (name == "identity") return TransformKind::Identity;
  if (name == "hflip") return TransformKind::HFlip;
  if (name == "crop") return TransformKind::Crop;
  if (name == "rotation") return TransformKind::Rotation;
  if (name == "scaling") return TransformKind::Scaling;
  throw ContractError("unknown transform kind: " + name);
}

std::string TransformSpec::to_json() const {
  json j{{"kind", kind_name(kind)}};
  if (kind == TransformKind::Crop) {
    j["ratio"] = crop_ratio;
    j["origin"] = {crop_origin_y, crop_origin_x};
  } else if (kind == TransformKind::Rotation) {
    j["angle_deg"] = angle_deg;
  } else if (kind == TransformKind::Scaling) {
    j["factor"] = scale_factor;
  }
  return j.dump();
}

TransformSpec TransformSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  TransformSpec g;
  g.kind = kind_from_name(j.at("kind").get<std::string>());
  if (g.kind == TransformKind::Crop) {
    g.crop_ratio = j.at("ratio").get<double>();
    g.crop_origin_y = j.at("origin")[0].get<double>();
    g.crop_origin_x = j.at("origin")[1].get<double>();
  } else if (g.kind == TransformKind::Rotation) {
    g.angle_deg = j.at("angle_deg").get<double>();
  } else if (g.kind == TransformKind::Scaling) {
    g.scale_factor = j.at("factor").get<double>();
  }
  return g;
}

void TransformSpec::crop_window(int size, int& y0, int& x0, int& side) const {
  side = static_cast<int>(std::lround(crop_ratio * size));
  y0 = static_cast<int>(std::lround(crop_origin_y * size));
  x0 = static_cast<int>(std::lround(crop_origin_x * size));
  if (side < 1 || y0 < 0 || x0 < 0 || y0 + side > size || x0 + side > size)
    throw ContractError("TransformSpec: crop window out of bounds");
}

void TransformFamily::validate() const {
  if (!enable_identity && !enable_hflip && !enable_crop && !enable_rotation && !enable_scaling)
    throw ContractError("TransformFamily: no transform kind enabled");
  if (enable_crop &&
      (crop_ratio_min < 0.05 || crop_ratio_max > 1.0 || crop_ratio_min > crop_ratio_max))
    throw ContractError("TransformFamily: bad crop ratio range");
  if (enable_rotation && rotation_min_deg > rotation_max_deg)
    throw ContractError("TransformFamily: bad rotation range");
  if (enable_scaling && (scaling_min <= 0.0 || scaling_min > scaling_max))
    throw ContractError("TransformFamily: bad scaling range");
}

TransformSpec sample_transform(Rng& rng, const TransformFamily& family, int image_size,
                               int stride) {
  family.validate();
  if (image_size % stride != 0)
    throw ContractError("sample_transform: image size not divisible by stride");

  TransformKind kinds[5];
  int n = 0;
  if (family.enable_identity) kinds[n++] = TransformKind::Identity;
  if (family.enable_hflip) kinds[n++] = TransformKind::HFlip;
  if (family.enable_crop) kinds[n++] = TransformKind::Crop;
  if (family.enable_rotation) kinds[n++] = TransformKind::Rotation;
  if (family.enable_scaling) kinds[n++] = TransformKind::Scaling;

  TransformSpec g;
  g.kind = kinds[rng.uniform_u32(static_cast<std::uint32_t>(n))];

  switch (g.kind) {
    case TransformKind::Crop: {
      double ratio = rng.uniform(family.crop_ratio_min, family.crop_ratio_max);
      // Snap the window to the feature-stride grid, keeping the ratio in
      // range (rounding up at the low end).
      int min_side =
          static_cast<int>(std::ceil(family.crop_ratio_min * image_size / stride)) * stride;
      int side = static_cast<int>(std::lround(ratio * image_size / stride)) * stride;
      side = std::clamp(side, std::min(min_side, image_size), image_size);
      int slots = (image_size - side) / stride + 1;
      int y0 = stride * static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(slots)));
      int x0 = stride * static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(slots)));
      g.crop_ratio = static_cast<double>(side) / image_size;
      g.crop_origin_y = static_cast<double>(y0) / image_size;
      g.crop_origin_x = static_cast<double>(x0) / image_size;
      break;
    }
    case TransformKind::Rotation:
      g.angle_deg = rng.uniform(family.rotation_min_deg, family.rotation_max_deg);
      break;
    case TransformKind::Scaling:
      g.scale_factor = rng.uniform(family.scaling_min, family.scaling_max);
      break;
    default:
      break;
  }
  return g;
}

ImageU8 apply_to_image(const TransformSpec& g, const ImageU8& image, int stride) {
  if (image.height != image.width) throw ContractError("apply_to_image: square images only");
  int size = image.height;
  if (size % stride != 0)
    throw ContractError("apply_to_image: dims not divisible by feature stride");

  switch (g.kind) {
    case TransformKind::Identity:
      return image;
    case TransformKind::HFlip: {
      ImageU8 out(size, size);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, size - 1 - x, c);
      return out;
    }
    case TransformKind::Crop: {
      int y0, x0, side;
      g.crop_window(size, y0, x0, side);
      if (side == size) return image;  // degenerate full-frame crop
      // Window extraction + bilinear resize back, clamped at the window
      // edges; mirrors Graph::crop_resize_bilinear so the image-space and
      // feature-space actions are index-consistent.
      double scale = static_cast<double>(side) / size;
      ImageU8 out(size, size);
      std::vector<int> lo(size);
      std::vector<double> frac(size);
      for (int o = 0; o < size; ++o) {
        double p = (o + 0.5) * scale - 0.5;
        p = std::clamp(p, 0.0, side - 1.0);
        int i0 = std::min(static_cast<int>(p), side - 2);
        lo[o] = i0;
        frac[o] = p - i0;
      }
      for (int oy = 0; oy < size; ++oy) {
        int iy = y0 + lo[oy];
        double fy = frac[oy];
        for (int ox = 0; ox < size; ++ox) {
          int ix = x0 + lo[ox];
          double fx = frac[ox];
          for (int c = 0; c < 3; ++c) {
            double v00 = image.at(iy, ix, c), v01 = image.at(iy, ix + 1, c);
            double v10 = image.at(iy + 1, ix, c), v11 = image.at(iy + 1, ix + 1, c);
            double top = v00 + fx * (v01 - v00);
            double bot = v10 + fx * (v11 - v10);
            double v = top + fy * (bot - top);
            out.at(oy, ox, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
          }
        }
      }
      return out;
    }
    case TransformKind::Rotation:
    case TransformKind::Scaling: {
      // Same semantics as Graph::warp_bilinear: bilinear with zero padding.
      InverseMap m = inverse_map_for(g, size);
      ImageU8 out(size, size);
      for (int oy = 0; oy < size; ++oy) {
        for (int ox = 0; ox < size; ++ox) {
          double sy, sx;
          m.source(oy, ox, sy, sx);
          if (sy <= -1.0 || sx <= -1.0 || sy >= size || sx >= size) continue;
          int iy = static_cast<int>(std::floor(sy));
          int ix = static_cast<int>(std::floor(sx));
          double fy = sy - iy, fx = sx - ix;
          double wy0 = iy >= 0 ? 1.0 - fy : 0.0;
          double wy1 = iy + 1 < size ? fy : 0.0;
          double wx0 = ix >= 0 ? 1.0 - fx : 0.0;
          double wx1 = ix + 1 < size ? fx : 0.0;
          int iy0 = std::clamp(iy, 0, size - 1), ix0 = std::clamp(ix, 0, size - 1);
          int iy1 = std::clamp(iy + 1, 0, size - 1), ix1 = std::clamp(ix + 1, 0, size - 1);
          for (int c = 0; c < 3; ++c) {
            double v = wy0 * wx0 * image.at(iy0, ix0, c) + wy0 * wx1 * image.at(iy0, ix1, c) +
                       wy1 * wx0 * image.at(iy1, ix0, c) + wy1 * wx1 * image.at(iy1, ix1, c);
            out.at(oy, ox, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
          }
        }
      }
      return out;
    }
  }
  throw ContractError("apply_to_image: unknown transform kind");
}

BinaryMask apply_to_mask(const TransformSpec& g, const BinaryMask& mask, int stride) {
  if (mask.height() != mask.width()) throw ContractError("apply_to_mask: square masks only");
  int size = mask.height();
  if (size % stride != 0)
    throw ContractError("apply_to_mask: dims not divisible by feature stride");

  switch (g.kind) {
    case TransformKind::Identity:
      return mask;
    case TransformKind::HFlip: {
      BinaryMask out(size, size);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          if (mask.get(y, size - 1 - x)) out.set(y, x, true);
      return out;
    }
    case TransformKind::Crop: {
      int y0, x0, side;
      g.crop_window(size, y0, x0, side);
      if (side == size) return mask;
      [[fallthrough]];
    }
    case TransformKind::Rotation:
    case TransformKind::Scaling: {
      InverseMap m = inverse_map_for(g, size);
      BinaryMask out(size, size);
      for (int oy = 0; oy < size; ++oy) {
        for (int ox = 0; ox < size; ++ox) {
          double sy, sx;
          m.source(oy, ox, sy, sx);
          int iy = static_cast<int>(std::lround(sy));
          int ix = static_cast<int>(std::lround(sx));
          if (iy < 0 || ix < 0 || iy >= size || ix >= size) continue;
          if (mask.get(iy, ix)) out.set(oy, ox, true);
        }
      }
      return out;
    }
  }
  throw ContractError("apply_to_mask: unknown transform kind");
}

}  // namespace uniqseg::geo
