// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "uniqseg/autodiff.hpp"
#include "uniqseg/errors.hpp"
#include "uniqseg/image.hpp"
#include "uniqseg/rng.hpp"

namespace uniqseg::model {

/// Compile-time architecture constants.
constexpr int kEncoderStride = 16;  // deepest encoder map stride
constexpr int kHeadHidden = 32;
constexpr int kGroupNormGroups = 2;
constexpr double kNoObjectPrior = 0.9;

struct ModelConfig {
  int feature_channels = 16;  // D, including the two coordinate channels
  int stride = 4;             // feature-map stride (image pixels per cell)
  int query_count = 16;       // N
  int class_count = 4;        // C
  std::uint64_t init_seed = 0;

  int filter_length() const { return feature_channels + 1; }  // weights + bias
  int grid_side() const {  // queries are anchored to an SxS grid, N <= S^2
    int s = 1;
    while (s * s < query_count) ++s;
    return s;
  }
  /// Encoder widths at strides 2/4/8/16.
  std::array<int, 4> encoder_widths() const {
    int b = std::max(4, feature_channels - 4);
    return {b, b + 2, b + 8, b + 12};
  }
  int decoder_stages() const {
    int n = 0;
    for (int s = kEncoderStride; s > stride; s /= 2) ++n;
    return n;
  }

  void validate() const {
    if (feature_channels < 4) throw ContractError("ModelConfig: feature_channels must be >= 4");
    if (stride != 2 && stride != 4 && stride != 8 && stride != 16)
      throw ContractError("ModelConfig: stride must be one of 2/4/8/16");
    if (query_count < 1) throw ContractError("ModelConfig: query_count must be >= 1");
    if (class_count < 2) throw ContractError("ModelConfig: class_count must be >= 2");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// One conv + groupnorm block's parameters.
template <typename T>
struct ConvBlock {
  nn::Tensor<T> w;     // (OC,IC,3,3)
  nn::Tensor<T> b;     // (OC)
  nn::Tensor<T> gn_g;  // (OC)
  nn::Tensor<T> gn_b;  // (OC)
};

/// All learnable parameters of the feature extractor and query creator.
template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<ConvBlock<T>> enc;  // 4 stages, stride 2 each
  std::vector<ConvBlock<T>> dec;  // decoder_stages() stages, x2 upsample each
  nn::Tensor<T> out_w;            // (D-2, C_last) 1x1 projection
  nn::Tensor<T> out_b;            // (D-2)
  // Query-creator head: separate filter and classification branches over the
  // same pooled cells (the two objectives pull in different directions).
  nn::Tensor<T> fil1_w, fil1_b;   // cell -> hidden
  nn::Tensor<T> fil2_w, fil2_b;   // hidden -> filter_length
  nn::Tensor<T> cls1_w, cls1_b;   // cell -> hidden
  nn::Tensor<T> cls2_w, cls2_b;   // hidden -> class_count + 1

  /// Fixed-order traversal over named parameter arrays (checkpointing,
  /// optimizers, gradient checking all rely on this order being stable).
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (std::size_t i = 0; i < enc.size(); ++i) {
      std::string p = "enc" + std::to_string(i + 1) + ".";
      fn(p + "w", enc[i].w);
      fn(p + "b", enc[i].b);
      fn(p + "gn_g", enc[i].gn_g);
      fn(p + "gn_b", enc[i].gn_b);
    }
    for (std::size_t i = 0; i < dec.size(); ++i) {
      std::string p = "dec" + std::to_string(i + 1) + ".";
      fn(p + "w", dec[i].w);
      fn(p + "b", dec[i].b);
      fn(p + "gn_g", dec[i].gn_g);
      fn(p + "gn_b", dec[i].gn_b);
    }
    fn("out.w", out_w);
    fn("out.b", out_b);
    fn("head.fil1_w", fil1_w);
    fn("head.fil1_b", fil1_b);
    fn("head.fil2_w", fil2_w);
    fn("head.fil2_b", fil2_b);
    fn("head.cls1_w", cls1_w);
    fn("head.cls1_b", cls1_b);
    fn("head.cls2_w", cls2_w);
    fn("head.cls2_b", cls2_b);
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each(
        [&fn](const std::string& name, nn::Tensor<T>& t) { fn(name, std::as_const(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&n](const std::string&, const nn::Tensor<T>& t) { n += t.size(); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&ok](const std::string&, const nn::Tensor<T>& t) {
      for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(static_cast<double>(t[i]))) ok = false;
    });
    return ok;
  }
};

namespace detail {

template <typename T>
ConvBlock<T> init_conv_block(int oc, int ic, Rng& rng) {
  ConvBlock<T> blk;
  blk.w = nn::Tensor<T>({oc, ic, 3, 3});
  T sd = static_cast<T>(std::sqrt(2.0 / (ic * 9)));  // He fan-in
  for (std::size_t i = 0; i < blk.w.size(); ++i)
    blk.w[i] = static_cast<T>(rng.normal()) * sd;
  blk.b = nn::Tensor<T>({oc});
  blk.gn_g = nn::Tensor<T>({oc});
  blk.gn_b = nn::Tensor<T>({oc});
  blk.gn_g.fill(T(1));
  return blk;
}

}  // namespace detail

template <typename T>
ModelParams<T> init_params(const ModelConfig& config) {
  config.validate();
  ModelParams<T> p;
  p.config = config;
  Rng rng = Rng::derive(config.init_seed, "model-init");

  auto widths = config.encoder_widths();
  int in_ch = 3;
  for (int i = 0; i < 4; ++i) {
    p.enc.push_back(detail::init_conv_block<T>(widths[i], in_ch, rng));
    in_ch = widths[i];
  }
  int cur = widths[3];
  for (int i = 0; i < config.decoder_stages(); ++i) {
    int out_ch = widths[2 - i];  // matches the skip connection's encoder map
    p.dec.push_back(detail::init_conv_block<T>(out_ch, cur, rng));
    cur = out_ch;
  }

  int learned = config.feature_channels - 2;
  p.out_w = nn::Tensor<T>({learned, cur});
  T sd = static_cast<T>(std::sqrt(2.0 / cur));
  for (std::size_t i = 0; i < p.out_w.size(); ++i)
    p.out_w[i] = static_cast<T>(rng.normal()) * sd;
  p.out_b = nn::Tensor<T>({learned});

  int head_in = widths[3] + 2;  // pooled cell features + cell-center coords
  auto init_linear = [&rng](nn::Tensor<T>& w, nn::Tensor<T>& b, int out, int in) {
    w = nn::Tensor<T>({out, in});
    T s = static_cast<T>(std::sqrt(2.0 / in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal()) * s;
    b = nn::Tensor<T>({out});
  };
  init_linear(p.fil1_w, p.fil1_b, kHeadHidden, head_in);
  init_linear(p.fil2_w, p.fil2_b, config.filter_length(), kHeadHidden);
  init_linear(p.cls1_w, p.cls1_b, kHeadHidden, head_in);
  init_linear(p.cls2_w, p.cls2_b, config.class_count + 1, kHeadHidden);
  // Class-logit bias: "no object" starts with prior probability 0.9.
  p.cls2_b[0] = static_cast<T>(std::log(kNoObjectPrior));
  for (int c = 1; c <= config.class_count; ++c)
    p.cls2_b[c] = static_cast<T>(std::log((1.0 - kNoObjectPrior) / config.class_count));
  return p;
}

/// Parameter leaves of one model instance inside a graph.
template <typename T>
struct ParamVars {
  struct BlockVars {
    typename nn::Graph<T>::Var w, b, gn_g, gn_b;
  };
  std::vector<BlockVars> enc, dec;
  typename nn::Graph<T>::Var out_w, out_b;
  typename nn::Graph<T>::Var fil1_w, fil1_b, fil2_w, fil2_b;
  typename nn::Graph<T>::Var cls1_w, cls1_b, cls2_w, cls2_b;
};

template <typename T>
ParamVars<T> bind_params(nn::Graph<T>& g, const ModelParams<T>& p, bool requires_grad) {
  ParamVars<T> v;
  for (const ConvBlock<T>& blk : p.enc)
    v.enc.push_back({g.leaf(blk.w, requires_grad), g.leaf(blk.b, requires_grad),
                     g.leaf(blk.gn_g, requires_grad), g.leaf(blk.gn_b, requires_grad)});
  for (const ConvBlock<T>& blk : p.dec)
    v.dec.push_back({g.leaf(blk.w, requires_grad), g.leaf(blk.b, requires_grad),
                     g.leaf(blk.gn_g, requires_grad), g.leaf(blk.gn_b, requires_grad)});
  v.out_w = g.leaf(p.out_w, requires_grad);
  v.out_b = g.leaf(p.out_b, requires_grad);
  v.fil1_w = g.leaf(p.fil1_w, requires_grad);
  v.fil1_b = g.leaf(p.fil1_b, requires_grad);
  v.fil2_w = g.leaf(p.fil2_w, requires_grad);
  v.fil2_b = g.leaf(p.fil2_b, requires_grad);
  v.cls1_w = g.leaf(p.cls1_w, requires_grad);
  v.cls1_b = g.leaf(p.cls1_b, requires_grad);
  v.cls2_w = g.leaf(p.cls2_w, requires_grad);
  v.cls2_b = g.leaf(p.cls2_b, requires_grad);
  return v;
}

/// Accumulates graph gradients back into a parallel ModelParams-shaped
/// gradient accumulator, scaled by `scale`.
template <typename T>
void accumulate_grads(nn::Graph<T>& g, const ParamVars<T>& vars, ModelParams<T>& grads, T scale) {
  auto add = [&](typename nn::Graph<T>::Var v, nn::Tensor<T>& dst) {
    const nn::Tensor<T>& src = g.grad(v);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  };
  for (std::size_t i = 0; i < vars.enc.size(); ++i) {
    add(vars.enc[i].w, grads.enc[i].w);
    add(vars.enc[i].b, grads.enc[i].b);
    add(vars.enc[i].gn_g, grads.enc[i].gn_g);
    add(vars.enc[i].gn_b, grads.enc[i].gn_b);
  }
  for (std::size_t i = 0; i < vars.dec.size(); ++i) {
    add(vars.dec[i].w, grads.dec[i].w);
    add(vars.dec[i].b, grads.dec[i].b);
    add(vars.dec[i].gn_g, grads.dec[i].gn_g);
    add(vars.dec[i].gn_b, grads.dec[i].gn_b);
  }
  add(vars.out_w, grads.out_w);
  add(vars.out_b, grads.out_b);
  add(vars.fil1_w, grads.fil1_w);
  add(vars.fil1_b, grads.fil1_b);
  add(vars.fil2_w, grads.fil2_w);
  add(vars.fil2_b, grads.fil2_b);
  add(vars.cls1_w, grads.cls1_w);
  add(vars.cls1_b, grads.cls1_b);
  add(vars.cls2_w, grads.cls2_w);
  add(vars.cls2_b, grads.cls2_b);
}

/// Zero-filled parameter-shaped accumulator.
template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& p) {
  ModelParams<T> z = p;
  z.for_each([](const std::string&, nn::Tensor<T>& t) { t.fill(T(0)); });
  return z;
}

/// All outputs of one forward pass; intermediates are kept because the
/// training objectives consume the feature map and queries separately.
template <typename T>
struct ForwardResult {
  typename nn::Graph<T>::Var feature_map;   // (D, H/stride, W/stride)
  typename nn::Graph<T>::Var low_res;       // deepest encoder map
  typename nn::Graph<T>::Var filters;       // (N, D+1)
  typename nn::Graph<T>::Var class_logits;  // (N, C+1); column 0 = "no object"
  typename nn::Graph<T>::Var mask_logits;   // (N, H, W)
  int feat_h = 0, feat_w = 0;
};

/// Converts an 8-bit image to the network's input tensor (3,H,W).
template <typename T>
nn::Tensor<T> image_to_tensor(const ImageU8& image) {
  nn::Tensor<T> t({3, image.height, image.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        t.at(c, y, x) = static_cast<T>(image.at(y, x, c)) / T(255) - T(0.5);
  return t;
}

/// Normalized coordinate channels spanning [-1,1] corner cell to corner cell.
template <typename T>
nn::Tensor<T> coordinate_channels(int h, int w) {
  nn::Tensor<T> t({2, h, w});
  for (int y = 0; y < h; ++y) {
    T cy = h > 1 ? T(-1) + T(2) * y / (h - 1) : T(0);
    for (int x = 0; x < w; ++x) {
      T cx = w > 1 ? T(-1) + T(2) * x / (w - 1) : T(0);
      t.at(0, y, x) = cy;
      t.at(1, y, x) = cx;
    }
  }
  return t;
}

namespace detail {

template <typename T>
typename nn::Graph<T>::Var conv_gn_silu(nn::Graph<T>& g, typename nn::Graph<T>::Var x,
                                        const typename ParamVars<T>::BlockVars& blk, int stride,
                                        typename nn::Graph<T>::Var skip = -1) {
  auto y = g.conv2d(x, blk.w, blk.b, stride);
  if (skip >= 0) y = g.add(y, skip);
  y = g.group_norm(y, blk.gn_g, blk.gn_b, kGroupNormGroups, T(1e-5));
  return g.silu(y);
}

}  // namespace detail

/// Dense feature extraction: strided conv encoder, upsampling decoder with
/// skip connections, 1x1 linear projection, appended coordinate channels.
template <typename T>
std::pair<typename nn::Graph<T>::Var, typename nn::Graph<T>::Var> extract_features(
    nn::Graph<T>& g, typename nn::Graph<T>::Var image, const ParamVars<T>& vars,
    const ModelConfig& config) {
  const nn::Tensor<T>& vi = g.value(image);
  int h = vi.dim(1), w = vi.dim(2);
  if (h % kEncoderStride != 0 || w % kEncoderStride != 0)
    throw ContractError("extract_features: image dims must be divisible by " +
                        std::to_string(kEncoderStride));

  std::vector<typename nn::Graph<T>::Var> enc_maps;
  auto x = image;
  for (int i = 0; i < 4; ++i) {
    x = detail::conv_gn_silu<T>(g, x, vars.enc[i], 2);
    enc_maps.push_back(x);
  }
  auto low = x;  // stride-16 map feeding the query creator

  for (int i = 0; i < config.decoder_stages(); ++i) {
    auto up = g.upsample_bilinear(x, 2);
    x = detail::conv_gn_silu<T>(g, up, vars.dec[i], 1, enc_maps[2 - i]);
  }

  // 1x1 projection to the learned feature channels (linear, symmetric range).
  auto learned = g.conv1x1(x, vars.out_w, vars.out_b);
  auto coords = coordinate_channels<T>(h / config.stride, w / config.stride);
  auto fm = g.append_const_channels(learned, coords);
  return {fm, low};
}

/// Query creation: grid-anchored dynamic-filter head over the deepest map.
/// Returns (filters (N,D+1), class_logits (N,C+1)).
template <typename T>
std::pair<typename nn::Graph<T>::Var, typename nn::Graph<T>::Var> create_queries(
    nn::Graph<T>& g, typename nn::Graph<T>::Var low, const ParamVars<T>& vars,
    const ModelConfig& config) {
  int s = config.grid_side();
  auto pooled = g.adaptive_avg_pool(low, s, s);
  auto cells = g.channels_to_rows(pooled);  // (S*S, C_low)

  int n = config.query_count;
  if (n < s * s) cells = g.slice_rows(cells, 0, n);

  // Cell-center coordinates anchor each query to its grid cell.
  nn::Tensor<T> anchors({n, 2});
  for (int i = 0; i < n; ++i) {
    int gy = i / s, gx = i % s;
    anchors.at(i, 0) = T(-1) + T(2) * (static_cast<T>(gy) + T(0.5)) / static_cast<T>(s);
    anchors.at(i, 1) = T(-1) + T(2) * (static_cast<T>(gx) + T(0.5)) / static_cast<T>(s);
  }
  auto hin = g.append_const_cols(cells, anchors);
  auto fil_hidden = g.silu(g.linear(hin, vars.fil1_w, vars.fil1_b));
  auto filters = g.linear(fil_hidden, vars.fil2_w, vars.fil2_b);
  auto cls_hidden = g.silu(g.linear(hin, vars.cls1_w, vars.cls1_b));
  auto class_logits = g.linear(cls_hidden, vars.cls2_w, vars.cls2_b);
  return {filters, class_logits};
}

/// Mask decoding: per-query 1x1 dynamic filter over the feature map, then
/// bilinear upsampling by the feature stride to image resolution.
template <typename T>
typename nn::Graph<T>::Var decode_masks(nn::Graph<T>& g, typename nn::Graph<T>::Var filters,
                                        typename nn::Graph<T>::Var fm, int stride) {
  auto low = g.decode_queries(filters, fm);
  return g.upsample_bilinear(low, stride);
}

/// Full forward pass; returns all intermediates the objectives need.
template <typename T>
ForwardResult<T> forward(nn::Graph<T>& g, typename nn::Graph<T>::Var image,
                         const ParamVars<T>& vars, const ModelConfig& config) {
  ForwardResult<T> r;
  auto [fm, low] = extract_features(g, image, vars, config);
  r.feature_map = fm;
  r.low_res = low;
  auto [filters, class_logits] = create_queries(g, low, vars, config);
  r.filters = filters;
  r.class_logits = class_logits;
  r.mask_logits = decode_masks(g, filters, fm, config.stride);
  const nn::Tensor<T>& fv = g.value(fm);
  r.feat_h = fv.dim(1);
  r.feat_w = fv.dim(2);
  return r;
}

}  // namespace uniqseg::model
