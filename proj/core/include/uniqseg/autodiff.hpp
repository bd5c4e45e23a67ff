// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "uniqseg/binary_mask.hpp"
#include "uniqseg/errors.hpp"
#include "uniqseg/tensor.hpp"

namespace uniqseg::nn {

/// Loss applied to query/foreign-pixel logits against an all-zero target.
enum class PairLossKind { Focal, L1, L2, CrossEntropy };

template <typename T>
T stable_softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

/// sigmoid(z), softplus(z) and softplus(-z) from a single exp/log1p pair.
/// Note log(p) = -softplus(-z) and log(1-p) = -softplus(z).
template <typename T>
struct SigmoidLogits {
  T p, sp_pos, sp_neg;

  explicit SigmoidLogits(T z) {
    if (z >= T(0)) {
      T e = std::exp(-z);
      T l = std::log1p(e);
      p = T(1) / (T(1) + e);
      sp_pos = z + l;
      sp_neg = l;
    } else {
      T e = std::exp(z);
      T l = std::log1p(e);
      p = e / (T(1) + e);
      sp_pos = l;
      sp_neg = -z + l;
    }
  }
};

/// x^gamma for x in [0,1]; the common exponents avoid a pow() call.
template <typename T>
inline T pow_gamma(T x, T gamma) {
  if (gamma == T(2.5)) return x * x * std::sqrt(x);
  if (gamma == T(2)) return x * x;
  if (gamma == T(1)) return x;
  if (gamma == T(0)) return T(1);
  return std::pow(x, gamma);
}

/// Reverse-mode tape over dense tensors. One graph per training example;
/// single-threaded by construction, so gradient accumulation order is fixed
/// and results are bit-reproducible.
template <typename T>
class Graph {
 public:
  using Var = int;

  Graph() { nodes_.reserve(160); }

  Var leaf(Tensor<T> value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return static_cast<Var>(nodes_.size() - 1);
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  const Tensor<T>& value(Var v) const { return nodes_[v].value; }
  bool needs_grad(Var v) const { return nodes_[v].requires_grad; }

  /// Gradient of the last backward() root with respect to v. Zero tensor if
  /// the node was never touched.
  const Tensor<T>& grad(Var v) {
    ensure_grad(v);
    return nodes_[v].grad;
  }

  void backward(Var root) {
    if (nodes_[root].value.size() != 1) throw ContractError("backward: root must be scalar");
    ensure_grad(root);
    nodes_[root].grad[0] = T(1);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backprop && !n.grad.empty()) n.backprop(*this);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

  // ---- elementwise / structural ops ----

  Var add(Var a, Var b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (!va.same_shape(vb)) throw ContractError("add: shape mismatch");
    Tensor<T> out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return make(std::move(out), {a, b}, [a, b](Graph& g, Var self) {
      const Tensor<T>& go = g.nodes_[self].grad;
      if (g.needs_grad(a)) {
        Tensor<T>& ga = g.mutable_grad(a);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (g.needs_grad(b)) {
        Tensor<T>& gb = g.mutable_grad(b);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }

  Var silu(Var x) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out = vx;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] * stable_sigmoid(vx[i]);
    return make(std::move(out), {x}, [x](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      const Tensor<T>& vx = g.value(x);
      Tensor<T>& gx = g.mutable_grad(x);
      for (std::size_t i = 0; i < go.size(); ++i) {
        T s = stable_sigmoid(vx[i]);
        gx[i] += go[i] * s * (T(1) + vx[i] * (T(1) - s));
      }
    });
  }

  Var sigmoid(Var x) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out = vx;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(vx[i]);
    return make(std::move(out), {x}, [x](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      const Tensor<T>& vy = g.value(self);
      Tensor<T>& gx = g.mutable_grad(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * vy[i] * (T(1) - vy[i]);
    });
  }

  /// Scalar linear combination: sum_i coeff_i * term_i (terms are scalars).
  Var affine_sum(const std::vector<std::pair<T, Var>>& terms) {
    Tensor<T> out({1});
    for (const auto& [c, v] : terms) {
      if (value(v).size() != 1) throw ContractError("affine_sum: non-scalar term");
      out[0] += c * value(v)[0];
    }
    auto captured = terms;
    return make(std::move(out), vars_of(terms), [captured](Graph& g, Var self) {
      T go = g.nodes_[self].grad[0];
      for (const auto& [c, v] : captured)
        if (g.needs_grad(v)) g.mutable_grad(v)[0] += c * go;
    });
  }

  // ---- convolution / normalization ----

  /// 3x3 convolution, padding 1. x: (C,H,W), w: (OC,IC,3,3), b: (OC).
  Var conv2d(Var x, Var w, Var b, int stride) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    const Tensor<T>& vb = value(b);
    if (vx.rank() != 3 || vw.rank() != 4 || vw.dim(2) != 3 || vw.dim(3) != 3)
      throw ContractError("conv2d: bad operand shapes");
    int ic = vx.dim(0), h = vx.dim(1), wd = vx.dim(2);
    int oc = vw.dim(0);
    if (vw.dim(1) != ic || vb.dim(0) != oc) throw ContractError("conv2d: channel mismatch");
    int ho = (h + 2 - 3) / stride + 1;
    int wo = (wd + 2 - 3) / stride + 1;

    Tensor<T> out({oc, ho, wo});
    for (int o = 0; o < oc; ++o) {
      T bias = vb[o];
      T* base = &out.at(o, 0, 0);
      for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) base[i] = bias;
      for (int i = 0; i < ic; ++i) {
        const T* wk = vw.data() + (static_cast<std::size_t>(o) * ic + i) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            T wv = wk[ky * 3 + kx];
            int ox0 = kx == 0 ? 1 : 0;
            int ox1 = std::min(wo - 1, (wd - kx) / stride);
            for (int oy = 0; oy < ho; ++oy) {
              int iy = oy * stride + ky - 1;
              if (iy < 0 || iy >= h) continue;
              const T* src = &vx.at(i, iy, 0);
              T* dst = &out.at(o, oy, 0);
              int off = kx - 1;
              for (int ox = ox0; ox <= ox1; ++ox) dst[ox] += wv * src[ox * stride + off];
            }
          }
        }
      }
    }

    return make(std::move(out), {x, w, b},
                [x, w, b, stride, ic, h, wd, oc, ho, wo](Graph& g, Var self) {
      const Tensor<T>& go = g.nodes_[self].grad;
      const Tensor<T>& vx = g.value(x);
      const Tensor<T>& vw = g.value(w);
      bool gx_needed = g.needs_grad(x);
      bool gw_needed = g.needs_grad(w);
      bool gb_needed = g.needs_grad(b);
      Tensor<T>* gx = gx_needed ? &g.mutable_grad(x) : nullptr;
      Tensor<T>* gw = gw_needed ? &g.mutable_grad(w) : nullptr;
      Tensor<T>* gb = gb_needed ? &g.mutable_grad(b) : nullptr;

      for (int o = 0; o < oc; ++o) {
        if (gb_needed) {
          T s = T(0);
          const T* gbase = &go.at(o, 0, 0);
          for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) s += gbase[i];
          (*gb)[o] += s;
        }
        for (int i = 0; i < ic; ++i) {
          const T* wk = vw.data() + (static_cast<std::size_t>(o) * ic + i) * 9;
          T* gwk = gw_needed ? gw->data() + (static_cast<std::size_t>(o) * ic + i) * 9 : nullptr;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              int ox0 = kx == 0 ? 1 : 0;
              int ox1 = std::min(wo - 1, (wd - kx) / stride);
              T wacc = T(0);
              T wv = wk[ky * 3 + kx];
              for (int oy = 0; oy < ho; ++oy) {
                int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= h) continue;
                const T* src = &vx.at(i, iy, 0);
                const T* gsrc = &go.at(o, oy, 0);
                int off = kx - 1;
                if (gw_needed)
                  for (int ox = ox0; ox <= ox1; ++ox) wacc += gsrc[ox] * src[ox * stride + off];
                if (gx_needed) {
                  T* gdst = &gx->at(i, iy, 0);
                  for (int ox = ox0; ox <= ox1; ++ox) gdst[ox * stride + off] += wv * gsrc[ox];
                }
              }
              if (gw_needed) gwk[ky * 3 + kx] += wacc;
            }
          }
        }
      }
    });
  }

  /// 1x1 convolution: x (C,H,W), w (OC,C), b (OC) -> (OC,H,W).
  Var conv1x1(Var x, Var w, Var b) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    const Tensor<T>& vb = value(b);
    int c = vx.dim(0), h = vx.dim(1), wd = vx.dim(2);
    int oc = vw.dim(0);
    if (vw.dim(1) != c || vb.dim(0) != oc) throw ContractError("conv1x1: channel mismatch");
    std::size_t plane = static_cast<std::size_t>(h) * wd;
    Tensor<T> out({oc, h, wd});
    for (int o = 0; o < oc; ++o) {
      T* dst = out.data() + o * plane;
      T bias = vb[o];
      for (std::size_t i = 0; i < plane; ++i) dst[i] = bias;
      for (int ic = 0; ic < c; ++ic) {
        T wv = vw.at(o, ic);
        const T* src = vx.data() + ic * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += wv * src[i];
      }
    }
    return make(std::move(out), {x, w, b}, [x, w, b, c, oc, plane](Graph& g, Var self) {
      const Tensor<T>& go = g.nodes_[self].grad;
      const Tensor<T>& vx = g.value(x);
      const Tensor<T>& vw = g.value(w);
      bool nx = g.needs_grad(x), nw = g.needs_grad(w), nb = g.needs_grad(b);
      Tensor<T>* gx = nx ? &g.mutable_grad(x) : nullptr;
      Tensor<T>* gw = nw ? &g.mutable_grad(w) : nullptr;
      Tensor<T>* gb = nb ? &g.mutable_grad(b) : nullptr;
      for (int o = 0; o < oc; ++o) {
        const T* gsrc = go.data() + o * plane;
        if (nb) {
          T s = T(0);
          for (std::size_t i = 0; i < plane; ++i) s += gsrc[i];
          (*gb)[o] += s;
        }
        for (int ic = 0; ic < c; ++ic) {
          const T* src = vx.data() + ic * plane;
          if (nw) {
            T s = T(0);
            for (std::size_t i = 0; i < plane; ++i) s += gsrc[i] * src[i];
            gw->at(o, ic) += s;
          }
          if (nx) {
            T wv = vw.at(o, ic);
            T* gdst = gx->data() + ic * plane;
            for (std::size_t i = 0; i < plane; ++i) gdst[i] += wv * gsrc[i];
          }
        }
      }
    });
  }

  /// (C,H,W) -> (H*W, C) row matrix of per-position channel vectors.
  Var channels_to_rows(Var x) {
    const Tensor<T>& vx = value(x);
    int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out({static_cast<int>(plane), c});
    for (int cc = 0; cc < c; ++cc) {
      const T* src = vx.data() + cc * plane;
      for (std::size_t i = 0; i < plane; ++i) out.at(static_cast<int>(i), cc) = src[i];
    }
    return make(std::move(out), {x}, [x, c, plane](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gx = g.mutable_grad(x);
      for (int cc = 0; cc < c; ++cc) {
        T* gdst = gx.data() + cc * plane;
        for (std::size_t i = 0; i < plane; ++i) gdst[i] += go.at(static_cast<int>(i), cc);
      }
    });
  }

  /// Row slice of a matrix: (N,M) -> (r1-r0, M).
  Var slice_rows(Var x, int r0, int r1) {
    const Tensor<T>& vx = value(x);
    int n = vx.dim(0), m = vx.dim(1);
    if (r0 < 0 || r1 > n || r0 >= r1) throw ContractError("slice_rows: bad range");
    Tensor<T> out({r1 - r0, m});
    std::copy(&vx.at(r0, 0), &vx.at(r0, 0) + static_cast<std::size_t>(r1 - r0) * m, out.data());
    return make(std::move(out), {x}, [x, r0, r1, m](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gx = g.mutable_grad(x);
      T* dst = &gx.at(r0, 0);
      for (std::size_t i = 0; i < static_cast<std::size_t>(r1 - r0) * m; ++i) dst[i] += go[i];
    });
  }

  /// GroupNorm with affine parameters. x: (C,H,W); gamma, beta: (C).
  Var group_norm(Var x, Var gamma, Var beta, int groups, T eps) {
    const Tensor<T>& vx = value(x);
    int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
    if (c % groups != 0) throw ContractError("group_norm: channels not divisible by groups");
    int cg = c / groups;
    std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t m = static_cast<std::size_t>(cg) * plane;

    const Tensor<T>& vg = value(gamma);
    const Tensor<T>& vbt = value(beta);
    Tensor<T> out({c, h, w});
    std::vector<T> means(groups), istds(groups);
    for (int g0 = 0; g0 < groups; ++g0) {
      const T* src = vx.data() + static_cast<std::size_t>(g0) * m;
      T mean = T(0);
      for (std::size_t i = 0; i < m; ++i) mean += src[i];
      mean /= static_cast<T>(m);
      T var = T(0);
      for (std::size_t i = 0; i < m; ++i) {
        T d = src[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(m);
      T istd = T(1) / std::sqrt(var + eps);
      means[g0] = mean;
      istds[g0] = istd;
      for (int cc = 0; cc < cg; ++cc) {
        int ch = g0 * cg + cc;
        T ga = vg[ch], be = vbt[ch];
        const T* s = vx.data() + static_cast<std::size_t>(ch) * plane;
        T* d = out.data() + static_cast<std::size_t>(ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) d[i] = ga * (s[i] - mean) * istd + be;
      }
    }

    return make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, groups, cg, plane, m, means, istds](Graph& g, Var self) {
      const Tensor<T>& go = g.nodes_[self].grad;
      const Tensor<T>& vx = g.value(x);
      const Tensor<T>& vg = g.value(gamma);
      bool need_x = g.needs_grad(x);
      bool need_g = g.needs_grad(gamma);
      bool need_b = g.needs_grad(beta);
      Tensor<T>* gx = need_x ? &g.mutable_grad(x) : nullptr;
      Tensor<T>* gg = need_g ? &g.mutable_grad(gamma) : nullptr;
      Tensor<T>* gb = need_b ? &g.mutable_grad(beta) : nullptr;

      for (int g0 = 0; g0 < groups; ++g0) {
        T mean = means[g0], istd = istds[g0];
        const T* xb = vx.data() + static_cast<std::size_t>(g0) * m;
        const T* gob = go.data() + static_cast<std::size_t>(g0) * m;

        if (need_g || need_b) {
          for (int cc = 0; cc < cg; ++cc) {
            int ch = g0 * cg + cc;
            const T* s = xb + static_cast<std::size_t>(cc) * plane;
            const T* gs = gob + static_cast<std::size_t>(cc) * plane;
            T sg = T(0), sb = T(0);
            for (std::size_t i = 0; i < plane; ++i) {
              sg += gs[i] * (s[i] - mean) * istd;
              sb += gs[i];
            }
            if (need_g) (*gg)[ch] += sg;
            if (need_b) (*gb)[ch] += sb;
          }
        }
        if (need_x) {
          // dxhat_i = go_i * gamma_c; then the usual normalization backward.
          T sum_dxhat = T(0), sum_dxhat_xm = T(0), sum_xm = T(0);
          for (int cc = 0; cc < cg; ++cc) {
            T ga = vg[g0 * cg + cc];
            const T* s = xb + static_cast<std::size_t>(cc) * plane;
            const T* gs = gob + static_cast<std::size_t>(cc) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              T dxh = gs[i] * ga;
              T xm = s[i] - mean;
              sum_dxhat += dxh;
              sum_dxhat_xm += dxh * xm;
              sum_xm += xm;
            }
          }
          T inv_m = T(1) / static_cast<T>(m);
          T dvar = sum_dxhat_xm * (T(-0.5)) * istd * istd * istd;
          T dmean = -istd * sum_dxhat + dvar * (T(-2)) * inv_m * sum_xm;
          T* gxb = gx->data() + static_cast<std::size_t>(g0) * m;
          for (int cc = 0; cc < cg; ++cc) {
            T ga = vg[g0 * cg + cc];
            const T* s = xb + static_cast<std::size_t>(cc) * plane;
            const T* gs = gob + static_cast<std::size_t>(cc) * plane;
            T* gd = gxb + static_cast<std::size_t>(cc) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              T dxh = gs[i] * ga;
              T xm = s[i] - mean;
              gd[i] += dxh * istd + dvar * T(2) * xm * inv_m + dmean * inv_m;
            }
          }
        }
      }
    });
  }

  // ---- resampling ----

  /// Bilinear upsampling by an integer factor (half-pixel convention).
  Var upsample_bilinear(Var x, int factor) {
    if (factor == 1) return x;
    const Tensor<T>& vx = value(x);
    int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
    return resize_from_window(x, 0, 0, h, w, h * factor, w * factor, c);
  }

  /// Extracts window (y0,x0,wh,ww) from x and bilinearly resizes it to
  /// (oh,ow). A full-window same-size call returns x unchanged.
  Var crop_resize_bilinear(Var x, int y0, int x0, int wh, int ww, int oh, int ow) {
    const Tensor<T>& vx = value(x);
    int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
    if (y0 < 0 || x0 < 0 || y0 + wh > h || x0 + ww > w || wh < 1 || ww < 1)
      throw ContractError("crop_resize_bilinear: window out of bounds");
    if (y0 == 0 && x0 == 0 && wh == h && ww == w && oh == h && ow == w) return x;
    return resize_from_window(x, y0, x0, wh, ww, oh, ow, c);
  }

  Var hflip(Var x) {
    const Tensor<T>& vx = value(x);
    int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
    Tensor<T> out({c, h, w});
    for (int cc = 0; cc < c; ++cc)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) out.at(cc, y, xx) = vx.at(cc, y, w - 1 - xx);
    return make(std::move(out), {x}, [x, c, h, w](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gx = g.mutable_grad(x);
      for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) gx.at(cc, y, w - 1 - xx) += go.at(cc, y, xx);
    });
  }

  /// Affine warp with bilinear sampling and zero padding: for each output
  /// pixel p, reads input at A*p + t (matrix in row-major [a00,a01,a10,a11]).
  Var warp_bilinear(Var x, const std::array<T, 4>& mat, T ty, T tx) {
    const Tensor<T>& vx = value(x);
    int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
    Tensor<T> out({c, h, w});
    struct Tap {
      int idx;      // output pixel linear index within a plane
      int i00;      // input pixel linear index of the top-left neighbor
      T w00, w01, w10, w11;
      bool x_edge, y_edge;
    };
    std::vector<Tap> taps;
    taps.reserve(static_cast<std::size_t>(h) * w);
    for (int oy = 0; oy < h; ++oy) {
      for (int ox = 0; ox < w; ++ox) {
        T py = static_cast<T>(oy) + T(0.5);
        T px = static_cast<T>(ox) + T(0.5);
        T sy = mat[2] * px + mat[3] * py + ty - T(0.5);
        T sx = mat[0] * px + mat[1] * py + tx - T(0.5);
        if (sy <= T(-1) || sx <= T(-1) || sy >= static_cast<T>(h) || sx >= static_cast<T>(w))
          continue;  // fully outside: zero padding
        int iy = static_cast<int>(std::floor(sy));
        int ix = static_cast<int>(std::floor(sx));
        T fy = sy - iy, fx = sx - ix;
        Tap t;
        t.idx = oy * w + ox;
        t.y_edge = iy < 0 || iy + 1 >= h;
        t.x_edge = ix < 0 || ix + 1 >= w;
        int iy0 = std::clamp(iy, 0, h - 1), ix0 = std::clamp(ix, 0, w - 1);
        t.i00 = iy0 * w + ix0;
        T wy0 = (iy >= 0) ? (T(1) - fy) : T(0);
        T wy1 = (iy + 1 < h) ? fy : T(0);
        T wx0 = (ix >= 0) ? (T(1) - fx) : T(0);
        T wx1 = (ix + 1 < w) ? fx : T(0);
        t.w00 = wy0 * wx0;
        t.w01 = wy0 * wx1;
        t.w10 = wy1 * wx0;
        t.w11 = wy1 * wx1;
        taps.push_back(t);
      }
    }
    std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int cc = 0; cc < c; ++cc) {
      const T* src = vx.data() + cc * plane;
      T* dst = out.data() + cc * plane;
      for (const Tap& t : taps) {
        int dx = t.x_edge ? 0 : 1;
        int dy = t.y_edge ? 0 : w;
        dst[t.idx] = t.w00 * src[t.i00] + t.w01 * src[t.i00 + dx] + t.w10 * src[t.i00 + dy] +
                     t.w11 * src[t.i00 + dy + dx];
      }
    }
    return make(std::move(out), {x}, [x, taps, c, plane, w](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gx = g.mutable_grad(x);
      for (int cc = 0; cc < c; ++cc) {
        const T* gsrc = go.data() + cc * plane;
        T* gdst = gx.data() + cc * plane;
        for (const Tap& t : taps) {
          T gv = gsrc[t.idx];
          int dx = t.x_edge ? 0 : 1;
          int dy = t.y_edge ? 0 : w;
          gdst[t.i00] += t.w00 * gv;
          gdst[t.i00 + dx] += t.w01 * gv;
          gdst[t.i00 + dy] += t.w10 * gv;
          gdst[t.i00 + dy + dx] += t.w11 * gv;
        }
      }
    });
  }

  /// Adaptive average pooling of (C,H,W) onto (C,OH,OW) cells.
  Var adaptive_avg_pool(Var x, int oh, int ow) {
    const Tensor<T>& vx = value(x);
    int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
    Tensor<T> out({c, oh, ow});
    for (int cc = 0; cc < c; ++cc) {
      for (int i = 0; i < oh; ++i) {
        int y0 = i * h / oh, y1 = std::max(y0 + 1, ((i + 1) * h + oh - 1) / oh);
        for (int j = 0; j < ow; ++j) {
          int x0 = j * w / ow, x1 = std::max(x0 + 1, ((j + 1) * w + ow - 1) / ow);
          T s = T(0);
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) s += vx.at(cc, y, xx);
          out.at(cc, i, j) = s / static_cast<T>((y1 - y0) * (x1 - x0));
        }
      }
    }
    return make(std::move(out), {x}, [x, oh, ow, c, h, w](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gx = g.mutable_grad(x);
      for (int cc = 0; cc < c; ++cc) {
        for (int i = 0; i < oh; ++i) {
          int y0 = i * h / oh, y1 = std::max(y0 + 1, ((i + 1) * h + oh - 1) / oh);
          for (int j = 0; j < ow; ++j) {
            int x0 = j * w / ow, x1 = std::max(x0 + 1, ((j + 1) * w + ow - 1) / ow);
            T gv = go.at(cc, i, j) / static_cast<T>((y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y)
              for (int xx = x0; xx < x1; ++xx) gx.at(cc, y, xx) += gv;
          }
        }
      }
    });
  }

  /// Appends constant channels (E,H,W) to x (C,H,W) -> (C+E,H,W).
  Var append_const_channels(Var x, const Tensor<T>& extra) {
    const Tensor<T>& vx = value(x);
    int c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
    if (extra.dim(1) != h || extra.dim(2) != w)
      throw ContractError("append_const_channels: spatial mismatch");
    int e = extra.dim(0);
    Tensor<T> out({c + e, h, w});
    std::copy(vx.data(), vx.data() + vx.size(), out.data());
    std::copy(extra.data(), extra.data() + extra.size(), out.data() + vx.size());
    std::size_t n = vx.size();
    return make(std::move(out), {x}, [x, n](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gx = g.mutable_grad(x);
      for (std::size_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  }

  // ---- dense / query ops ----

  /// x: (N,IN), w: (OUT,IN), b: (OUT) -> (N,OUT).
  Var linear(Var x, Var w, Var b) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    const Tensor<T>& vb = value(b);
    int n = vx.dim(0), in = vx.dim(1), out_dim = vw.dim(0);
    if (vw.dim(1) != in || vb.dim(0) != out_dim) throw ContractError("linear: shape mismatch");
    Tensor<T> out({n, out_dim});
    for (int r = 0; r < n; ++r) {
      const T* xr = &vx.at(r, 0);
      for (int o = 0; o < out_dim; ++o) {
        const T* wr = &vw.at(o, 0);
        T s = vb[o];
        for (int i = 0; i < in; ++i) s += xr[i] * wr[i];
        out.at(r, o) = s;
      }
    }
    return make(std::move(out), {x, w, b}, [x, w, b, n, in, out_dim](Graph& g, Var self) {
      const Tensor<T>& go = g.nodes_[self].grad;
      const Tensor<T>& vx = g.value(x);
      const Tensor<T>& vw = g.value(w);
      bool nx = g.needs_grad(x), nw = g.needs_grad(w), nb = g.needs_grad(b);
      Tensor<T>* gx = nx ? &g.mutable_grad(x) : nullptr;
      Tensor<T>* gw = nw ? &g.mutable_grad(w) : nullptr;
      Tensor<T>* gb = nb ? &g.mutable_grad(b) : nullptr;
      for (int r = 0; r < n; ++r) {
        const T* xr = &vx.at(r, 0);
        const T* gor = &go.at(r, 0);
        for (int o = 0; o < out_dim; ++o) {
          T gv = gor[o];
          if (gv == T(0)) continue;
          if (nb) (*gb)[o] += gv;
          const T* wr = &vw.at(o, 0);
          if (nw) {
            T* gwr = &gw->at(o, 0);
            for (int i = 0; i < in; ++i) gwr[i] += gv * xr[i];
          }
          if (nx) {
            T* gxr = &gx->at(r, 0);
            for (int i = 0; i < in; ++i) gxr[i] += gv * wr[i];
          }
        }
      }
    });
  }

  /// Appends constant columns to a row matrix: (N,A) + (N,B) const -> (N,A+B).
  Var append_const_cols(Var x, const Tensor<T>& extra) {
    const Tensor<T>& vx = value(x);
    int n = vx.dim(0), a = vx.dim(1), b = extra.dim(1);
    if (extra.dim(0) != n) throw ContractError("append_const_cols: row mismatch");
    Tensor<T> out({n, a + b});
    for (int r = 0; r < n; ++r) {
      std::copy(&vx.at(r, 0), &vx.at(r, 0) + a, &out.at(r, 0));
      std::copy(&extra.at(r, 0), &extra.at(r, 0) + b, &out.at(r, a));
    }
    return make(std::move(out), {x}, [x, n, a](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gx = g.mutable_grad(x);
      for (int r = 0; r < n; ++r)
        for (int i = 0; i < a; ++i) gx.at(r, i) += go.at(r, i);
    });
  }

  /// Column slice of a row matrix: (N,M) -> (N,c1-c0).
  Var slice_cols(Var x, int c0, int c1) {
    const Tensor<T>& vx = value(x);
    int n = vx.dim(0), m = vx.dim(1);
    if (c0 < 0 || c1 > m || c0 >= c1) throw ContractError("slice_cols: bad range");
    Tensor<T> out({n, c1 - c0});
    for (int r = 0; r < n; ++r)
      std::copy(&vx.at(r, c0), &vx.at(r, c1), &out.at(r, 0));
    return make(std::move(out), {x}, [x, n, c0, c1](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gx = g.mutable_grad(x);
      for (int r = 0; r < n; ++r)
        for (int i = 0; i < c1 - c0; ++i) gx.at(r, c0 + i) += go.at(r, i);
    });
  }

  /// Dynamic-filter mask decoding at feature resolution.
  /// filters: (N,D+1) [weights | bias], fm: (D,h,w) -> (N,h,w).
  Var decode_queries(Var filters, Var fm) {
    const Tensor<T>& vf = value(filters);
    const Tensor<T>& vm = value(fm);
    int n = vf.dim(0), d = vm.dim(0), h = vm.dim(1), w = vm.dim(2);
    if (vf.dim(1) != d + 1) throw ContractError("decode_queries: filter length != channels+1");
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out({n, h, w});
    for (int q = 0; q < n; ++q) {
      const T* f = &vf.at(q, 0);
      T* dst = out.data() + q * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = f[d];
      for (int c = 0; c < d; ++c) {
        const T* src = vm.data() + c * plane;
        T fc = f[c];
        for (std::size_t i = 0; i < plane; ++i) dst[i] += fc * src[i];
      }
    }
    return make(std::move(out), {filters, fm}, [filters, fm, n, d, plane](Graph& g, Var self) {
      const Tensor<T>& go = g.nodes_[self].grad;
      const Tensor<T>& vf = g.value(filters);
      const Tensor<T>& vm = g.value(fm);
      bool nf = g.needs_grad(filters), nm = g.needs_grad(fm);
      Tensor<T>* gf = nf ? &g.mutable_grad(filters) : nullptr;
      Tensor<T>* gm = nm ? &g.mutable_grad(fm) : nullptr;
      for (int q = 0; q < n; ++q) {
        const T* gq = go.data() + q * plane;
        const T* f = &vf.at(q, 0);
        if (nf) {
          T* gfq = &gf->at(q, 0);
          T bias_acc = T(0);
          for (std::size_t i = 0; i < plane; ++i) bias_acc += gq[i];
          gfq[d] += bias_acc;
          for (int c = 0; c < d; ++c) {
            const T* src = vm.data() + c * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += gq[i] * src[i];
            gfq[c] += acc;
          }
        }
        if (nm) {
          for (int c = 0; c < d; ++c) {
            T fc = f[c];
            T* gdst = gm->data() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) gdst[i] += fc * gq[i];
          }
        }
      }
    });
  }

  /// Query logits against detached pixel embeddings.
  /// filters: (N,D+1), embeddings: (P,D) constant -> (N,P).
  Var query_pixel_logits(Var filters, const Tensor<T>& embeddings) {
    const Tensor<T>& vf = value(filters);
    int n = vf.dim(0), p = embeddings.dim(0), d = embeddings.dim(1);
    if (vf.dim(1) != d + 1) throw ContractError("query_pixel_logits: dimension mismatch");
    Tensor<T> out({n, p});
    for (int q = 0; q < n; ++q) {
      const T* f = &vf.at(q, 0);
      for (int j = 0; j < p; ++j) {
        const T* e = &embeddings.at(j, 0);
        T s = f[d];
        for (int c = 0; c < d; ++c) s += f[c] * e[c];
        out.at(q, j) = s;
      }
    }
    Tensor<T> emb = embeddings;  // keep alive for backward
    return make(std::move(out), {filters}, [filters, emb, n, p, d](Graph& g, Var self) {
      if (!g.needs_grad(filters)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gf = g.mutable_grad(filters);
      for (int q = 0; q < n; ++q) {
        T* gfq = &gf.at(q, 0);
        const T* gq = &go.at(q, 0);
        for (int j = 0; j < p; ++j) {
          T gv = gq[j];
          if (gv == T(0)) continue;
          const T* e = &emb.at(j, 0);
          for (int c = 0; c < d; ++c) gfq[c] += gv * e[c];
          gfq[d] += gv;
        }
      }
    });
  }

  // ---- fused losses (scalar outputs) ----

  /// Mean sigmoid focal loss against a binary target of the same shape.
  Var focal_loss(Var logits, const Tensor<T>& targets, T alpha, T gamma) {
    const Tensor<T>& vz = value(logits);
    if (!vz.same_shape(targets)) throw ContractError("focal_loss: shape mismatch");
    std::size_t n = vz.size();
    if (n == 0) throw ContractError("focal_loss: empty input");
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      SigmoidLogits<T> s(vz[i]);
      if (targets[i] > T(0.5)) {
        // -alpha * (1-p)^gamma * log(p)
        acc += alpha * pow_gamma(T(1) - s.p, gamma) * s.sp_neg;
      } else {
        acc += (T(1) - alpha) * pow_gamma(s.p, gamma) * s.sp_pos;
      }
    }
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(n);
    Tensor<T> tgt = targets;
    return make(std::move(out), {logits}, [logits, tgt, alpha, gamma, n](Graph& g, Var self) {
      if (!g.needs_grad(logits)) return;
      T go = g.nodes_[self].grad[0] / static_cast<T>(n);
      const Tensor<T>& vz = g.value(logits);
      Tensor<T>& gz = g.mutable_grad(logits);
      for (std::size_t i = 0; i < n; ++i) {
        SigmoidLogits<T> s(vz[i]);
        T d;
        if (tgt[i] > T(0.5)) {
          // d/dz [-a (1-p)^g log p] = a (1-p)^g (g p log p - (1-p))
          d = alpha * pow_gamma(T(1) - s.p, gamma) * (gamma * s.p * (-s.sp_neg) - (T(1) - s.p));
        } else {
          d = (T(1) - alpha) * pow_gamma(s.p, gamma) * (s.p - gamma * (T(1) - s.p) * (-s.sp_pos));
        }
        gz[i] += go * d;
      }
    });
  }

  /// Mean of the configured pair loss against an all-zero target over every
  /// element of `logits` (query x foreign-pixel logits). Returns 0 for an
  /// empty matrix.
  Var pair_loss_zero_target(Var logits, PairLossKind kind, T alpha, T gamma) {
    const Tensor<T>& vz = value(logits);
    std::size_t n = vz.size();
    if (n == 0) return constant(Tensor<T>({1}));
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      SigmoidLogits<T> s(vz[i]);
      switch (kind) {
        case PairLossKind::Focal:
          acc += (T(1) - alpha) * pow_gamma(s.p, gamma) * s.sp_pos;
          break;
        case PairLossKind::L1: acc += s.p; break;
        case PairLossKind::L2: acc += s.p * s.p; break;
        case PairLossKind::CrossEntropy: acc += s.sp_pos; break;
      }
    }
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(n);
    return make(std::move(out), {logits}, [logits, kind, alpha, gamma, n](Graph& g, Var self) {
      if (!g.needs_grad(logits)) return;
      T go = g.nodes_[self].grad[0] / static_cast<T>(n);
      const Tensor<T>& vz = g.value(logits);
      Tensor<T>& gz = g.mutable_grad(logits);
      for (std::size_t i = 0; i < n; ++i) {
        SigmoidLogits<T> s(vz[i]);
        T d = T(0);
        switch (kind) {
          case PairLossKind::Focal:
            d = (T(1) - alpha) * pow_gamma(s.p, gamma) * (s.p - gamma * (T(1) - s.p) * (-s.sp_pos));
            break;
          case PairLossKind::L1: d = s.p * (T(1) - s.p); break;
          case PairLossKind::L2: d = T(2) * s.p * s.p * (T(1) - s.p); break;
          case PairLossKind::CrossEntropy: d = s.p; break;
        }
        gz[i] += go * d;
      }
    });
  }

  /// Soft dice between probability planes of `probs` (N,H,W) and binary
  /// target masks, averaged over the given (row, mask) pairs. Empty pair
  /// list yields 0.
  Var dice_pair_mean(Var probs, const std::vector<std::pair<int, const BinaryMask*>>& pairs,
                     T eps) {
    const Tensor<T>& vp = value(probs);
    int h = vp.dim(1), w = vp.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    if (pairs.empty()) return constant(Tensor<T>({1}));

    struct Saved {
      int row;
      std::vector<std::uint64_t> mask_words;
      T inter, denom;  // sum(p*m), sum(p^2)+sum(m^2)
    };
    std::vector<Saved> saved;
    saved.reserve(pairs.size());
    T acc = T(0);
    for (const auto& [row, mask] : pairs) {
      if (mask->height() != h || mask->width() != w)
        throw ContractError("dice_pair_mean: mask shape mismatch");
      const T* p = vp.data() + static_cast<std::size_t>(row) * plane;
      T inter = T(0), psq = T(0);
      long long marea = mask->area();
      for (std::size_t i = 0; i < plane; ++i) {
        T pv = p[i];
        psq += pv * pv;
        if (mask->get(static_cast<int>(i / w), static_cast<int>(i % w))) inter += pv;
      }
      T denom = psq + static_cast<T>(marea);
      acc += T(1) - (T(2) * inter + eps) / (denom + eps);
      saved.push_back({row, mask->words(), inter, denom});
    }
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(pairs.size());
    std::size_t count = pairs.size();
    return make(std::move(out), {probs}, [probs, saved, plane, w, eps, count](Graph& g, Var self) {
      if (!g.needs_grad(probs)) return;
      T go = g.nodes_[self].grad[0] / static_cast<T>(count);
      const Tensor<T>& vp = g.value(probs);
      Tensor<T>& gp = g.mutable_grad(probs);
      for (const auto& s : saved) {
        const T* p = vp.data() + static_cast<std::size_t>(s.row) * plane;
        T* gd = gp.data() + static_cast<std::size_t>(s.row) * plane;
        T de = s.denom + eps;
        T num = T(2) * s.inter + eps;
        // d/dp_i [1 - num/de] = -(2*m_i*de - num*2*p_i) / de^2
        T inv_de2 = T(1) / (de * de);
        for (std::size_t i = 0; i < plane; ++i) {
          bool m = (s.mask_words[i >> 6] >> (i & 63)) & 1u;
          T d = (num * T(2) * p[i] - (m ? T(2) * de : T(0))) * inv_de2;
          gd[i] += go * d;
        }
      }
    });
  }

  /// dice_pair_mean with the sigmoid fused in: rows of `logits` (N,H,W) are
  /// mapped through sigmoid and dice-matched against binary targets. Equals
  /// dice_pair_mean(sigmoid(logits), pairs, eps) exactly, but touches only
  /// the selected rows.
  Var dice_logits_pair_mean(Var logits,
                            const std::vector<std::pair<int, const BinaryMask*>>& pairs, T eps) {
    const Tensor<T>& vz = value(logits);
    int h = vz.dim(1), w = vz.dim(2);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    if (pairs.empty()) return constant(Tensor<T>({1}));

    struct Saved {
      int row;
      std::vector<std::uint64_t> mask_words;
      T inter, denom;
    };
    std::vector<Saved> saved;
    saved.reserve(pairs.size());
    T acc = T(0);
    for (const auto& [row, mask] : pairs) {
      if (mask->height() != h || mask->width() != w)
        throw ContractError("dice_logits_pair_mean: mask shape mismatch");
      const T* z = vz.data() + static_cast<std::size_t>(row) * plane;
      const std::vector<std::uint64_t>& words = mask->words();
      T inter = T(0), psq = T(0);
      for (std::size_t i = 0; i < plane; ++i) {
        T pv = stable_sigmoid(z[i]);
        psq += pv * pv;
        if ((words[i >> 6] >> (i & 63)) & 1u) inter += pv;
      }
      T denom = psq + static_cast<T>(mask->area());
      acc += T(1) - (T(2) * inter + eps) / (denom + eps);
      saved.push_back({row, words, inter, denom});
    }
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(pairs.size());
    std::size_t count = pairs.size();
    return make(std::move(out), {logits},
                [logits, saved, plane, eps, count](Graph& g, Var self) {
      if (!g.needs_grad(logits)) return;
      T go = g.nodes_[self].grad[0] / static_cast<T>(count);
      const Tensor<T>& vz = g.value(logits);
      Tensor<T>& gz = g.mutable_grad(logits);
      for (const auto& s : saved) {
        const T* z = vz.data() + static_cast<std::size_t>(s.row) * plane;
        T* gd = gz.data() + static_cast<std::size_t>(s.row) * plane;
        T de = s.denom + eps;
        T num = T(2) * s.inter + eps;
        T inv_de2 = T(1) / (de * de);
        for (std::size_t i = 0; i < plane; ++i) {
          T pv = stable_sigmoid(z[i]);
          bool m = (s.mask_words[i >> 6] >> (i & 63)) & 1u;
          T dldp = (num * T(2) * pv - (m ? T(2) * de : T(0))) * inv_de2;
          gd[i] += go * dldp * pv * (T(1) - pv);
        }
      }
    });
  }

  /// Weighted mean softmax cross-entropy over rows of (N,M) logits.
  /// targets[r] is the target column; weights[r] scales that row's term.
  /// Loss = sum_r w_r * CE_r / sum_r w_r.
  Var softmax_ce_weighted(Var logits, const std::vector<int>& targets,
                          const std::vector<T>& weights) {
    const Tensor<T>& vz = value(logits);
    int n = vz.dim(0), m = vz.dim(1);
    if (static_cast<int>(targets.size()) != n || static_cast<int>(weights.size()) != n)
      throw ContractError("softmax_ce_weighted: row count mismatch");
    T wsum = T(0);
    for (T wv : weights) wsum += wv;
    if (wsum <= T(0)) throw ContractError("softmax_ce_weighted: non-positive weight sum");

    T acc = T(0);
    for (int r = 0; r < n; ++r) {
      if (targets[r] < 0 || targets[r] >= m)
        throw ContractError("softmax_ce_weighted: target out of range");
      const T* zr = &vz.at(r, 0);
      T mx = zr[0];
      for (int j = 1; j < m; ++j) mx = std::max(mx, zr[j]);
      T lse = T(0);
      for (int j = 0; j < m; ++j) lse += std::exp(zr[j] - mx);
      lse = mx + std::log(lse);
      acc += weights[r] * (lse - zr[targets[r]]);
    }
    Tensor<T> out({1});
    out[0] = acc / wsum;
    auto tgt = targets;
    auto wts = weights;
    return make(std::move(out), {logits}, [logits, tgt, wts, wsum, n, m](Graph& g, Var self) {
      if (!g.needs_grad(logits)) return;
      T go = g.nodes_[self].grad[0] / wsum;
      const Tensor<T>& vz = g.value(logits);
      Tensor<T>& gz = g.mutable_grad(logits);
      for (int r = 0; r < n; ++r) {
        const T* zr = &vz.at(r, 0);
        T* gr = &gz.at(r, 0);
        T mx = zr[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, zr[j]);
        T lse = T(0);
        for (int j = 0; j < m; ++j) lse += std::exp(zr[j] - mx);
        T scale = go * wts[r];
        for (int j = 0; j < m; ++j) {
          T p = std::exp(zr[j] - mx) / lse;
          gr[j] += scale * (p - (j == tgt[r] ? T(1) : T(0)));
        }
      }
    });
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Graph&)> backprop;  // bound with self id; null for leaves
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;

  void ensure_grad(Var v) {
    Node& n = nodes_[v];
    if (n.grad.empty() && !n.value.empty()) {
      std::vector<int> dims;
      for (int i = 0; i < n.value.rank(); ++i) dims.push_back(n.value.dim(i));
      n.grad = Tensor<T>(dims);
    }
  }

  Tensor<T>& mutable_grad(Var v) {
    ensure_grad(v);
    return nodes_[v].grad;
  }

  static std::vector<Var> vars_of(const std::vector<std::pair<T, Var>>& terms) {
    std::vector<Var> out;
    out.reserve(terms.size());
    for (const auto& [c, v] : terms) out.push_back(v);
    return out;
  }

  template <typename Fn>
  Var make(Tensor<T> value, const std::vector<Var>& inputs, Fn&& back) {
    bool rg = false;
    for (Var v : inputs) rg = rg || nodes_[v].requires_grad;
    Node node;
    node.value = std::move(value);
    node.requires_grad = rg;
    nodes_.push_back(std::move(node));
    Var self = static_cast<Var>(nodes_.size() - 1);
    if (rg) {
      auto fn = std::forward<Fn>(back);
      nodes_[self].backprop = [fn, self](Graph& g) { fn(g, self); };
    }
    return self;
  }

  /// Shared bilinear resize core: reads window (y0,x0,wh,ww) of x, writes
  /// (oh,ow) output with half-pixel sampling and edge clamping.
  Var resize_from_window(Var x, int y0, int x0, int wh, int ww, int oh, int ow, int c) {
    const Tensor<T>& vx = value(x);
    int h = vx.dim(1), w = vx.dim(2);
    std::size_t in_plane = static_cast<std::size_t>(h) * w;
    std::size_t out_plane = static_cast<std::size_t>(oh) * ow;

    // Precompute per-axis taps.
    std::vector<int> iy0(oh), ix0(ow);
    std::vector<T> fy(oh), fx(ow);
    T sy = static_cast<T>(wh) / static_cast<T>(oh);
    T sx = static_cast<T>(ww) / static_cast<T>(ow);
    for (int i = 0; i < oh; ++i) {
      T p = (static_cast<T>(i) + T(0.5)) * sy - T(0.5);
      p = std::clamp(p, T(0), static_cast<T>(wh - 1));
      int i0 = std::min(static_cast<int>(p), wh - 2 >= 0 ? wh - 2 : 0);
      iy0[i] = y0 + i0;
      fy[i] = wh > 1 ? p - static_cast<T>(i0) : T(0);
    }
    for (int j = 0; j < ow; ++j) {
      T p = (static_cast<T>(j) + T(0.5)) * sx - T(0.5);
      p = std::clamp(p, T(0), static_cast<T>(ww - 1));
      int j0 = std::min(static_cast<int>(p), ww - 2 >= 0 ? ww - 2 : 0);
      ix0[j] = x0 + j0;
      fx[j] = ww > 1 ? p - static_cast<T>(j0) : T(0);
    }
    int ystep = wh > 1 ? w : 0;
    int xstep = ww > 1 ? 1 : 0;

    Tensor<T> out({c, oh, ow});
    for (int cc = 0; cc < c; ++cc) {
      const T* src = vx.data() + cc * in_plane;
      T* dst = out.data() + cc * out_plane;
      for (int i = 0; i < oh; ++i) {
        T ty = fy[i];
        const T* row = src + static_cast<std::size_t>(iy0[i]) * w;
        T* drow = dst + static_cast<std::size_t>(i) * ow;
        for (int j = 0; j < ow; ++j) {
          const T* p00 = row + ix0[j];
          T tx = fx[j];
          T top = p00[0] + tx * (p00[xstep] - p00[0]);
          T bot = p00[ystep] + tx * (p00[ystep + xstep] - p00[ystep]);
          drow[j] = top + ty * (bot - top);
        }
      }
    }
    return make(std::move(out), {x},
                [x, iy0, ix0, fy, fx, oh, ow, c, w, in_plane, out_plane, ystep,
                 xstep](Graph& g, Var self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& go = g.nodes_[self].grad;
      Tensor<T>& gx = g.mutable_grad(x);
      for (int cc = 0; cc < c; ++cc) {
        const T* gsrc = go.data() + cc * out_plane;
        T* gdst = gx.data() + cc * in_plane;
        for (int i = 0; i < oh; ++i) {
          T ty = fy[i];
          T* grow = gdst + static_cast<std::size_t>(iy0[i]) * w;
          const T* gr = gsrc + static_cast<std::size_t>(i) * ow;
          for (int j = 0; j < ow; ++j) {
            T gv = gr[j];
            if (gv == T(0)) continue;
            T tx = fx[j];
            T* p00 = grow + ix0[j];
            p00[0] += gv * (T(1) - ty) * (T(1) - tx);
            p00[xstep] += gv * (T(1) - ty) * tx;
            p00[ystep] += gv * ty * (T(1) - tx);
            p00[ystep + xstep] += gv * ty * tx;
          }
        }
      }
    });
  }
};

}  // namespace uniqseg::nn
