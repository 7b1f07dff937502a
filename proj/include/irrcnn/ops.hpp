/*
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "irrcnn/tensor.hpp"

namespace irrcnn {

struct Stride2 {
  Index h = 1, w = 1;
};
struct Window2 {
  Index h = 3, w = 3;
};

enum class Padding { Valid, Same };

/// Output size and zero-pad placement for a windowed scan. Same padding is
/// symmetric; an odd total pad puts the extra row/column at the bottom/right.
struct ScanGeometry {
  Index out_h = 0, out_w = 0;
  Index pad_top = 0, pad_left = 0;
};

inline ScanGeometry scan_geometry(Index h, Index w, Index kh, Index kw, Stride2 st,
                                  Padding pad) {
  check_shape(st.h >= 1 && st.w >= 1, "stride components must be >= 1");
  ScanGeometry g;
  if (pad == Padding::Valid) {
    check_shape(h >= kh && w >= kw,
                "valid padding: spatial dims smaller than the window");
    g.out_h = (h - kh) / st.h + 1;
    g.out_w = (w - kw) / st.w + 1;
  } else {
    g.out_h = (h + st.h - 1) / st.h;
    g.out_w = (w + st.w - 1) / st.w;
    const Index pad_h = std::max<Index>((g.out_h - 1) * st.h + kh - h, 0);
    const Index pad_w = std::max<Index>((g.out_w - 1) * st.w + kw - w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

namespace detail {

/// Patch matrix for one batch item: row r = (c, ky, kx), column p = (oy, ox).
/// Out-of-bounds taps are zero.
template <typename S>
void im2col(const Tensor<S>& x, Index n, Index kh, Index kw, Stride2 st,
            const ScanGeometry& g, RowMat<S>& cols) {
  const Index c = x.shape.c, h = x.shape.h, w = x.shape.w;
  cols.setZero(c * kh * kw, g.out_h * g.out_w);
  for (Index ch = 0; ch < c; ++ch) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        const Index row = (ch * kh + ky) * kw + kx;
        S* dst = cols.data() + row * cols.cols();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * st.h - g.pad_top + ky;
          if (iy < 0 || iy >= h) continue;
          const S* src = x.data.data() + x.offset(n, ch, iy, 0);
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * st.w - g.pad_left + kx;
            if (ix >= 0 && ix < w) dst[oy * g.out_w + ox] = src[ix];
          }
        }
      }
    }
  }
}

/// Scatter-add transpose of im2col.
template <typename S>
void col2im(const RowMat<S>& cols, Index n, Index kh, Index kw, Stride2 st,
            const ScanGeometry& g, Tensor<S>& dx) {
  const Index c = dx.shape.c, h = dx.shape.h, w = dx.shape.w;
  for (Index ch = 0; ch < c; ++ch) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        const Index row = (ch * kh + ky) * kw + kx;
        const S* src = cols.data() + row * cols.cols();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * st.h - g.pad_top + ky;
          if (iy < 0 || iy >= h) continue;
          S* dst = dx.data.data() + dx.offset(n, ch, iy, 0);
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * st.w - g.pad_left + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

template <typename S>
void check_conv_args(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias) {
  check_shape(x.shape.c == w.shape.c,
              "conv2d: input channels " + std::to_string(x.shape.c) +
                  " != kernel in-channels " + std::to_string(w.shape.c));
  if (bias != nullptr) {
    check_shape(bias->shape == Shape{1, w.shape.n, 1, 1},
                "conv2d: bias shape must be (1,f,1,1)");
  }
}

}  // namespace detail

/// Cross-correlation (no kernel flip) of x with weights (f, c, kh, kw), plus
/// broadcast bias. Lowered to a dense matrix product per batch item.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias,
                 Stride2 st, Padding pad) {
  detail::check_conv_args(x, w, bias);
  const Index f = w.shape.n, kh = w.shape.h, kw = w.shape.w;
  const ScanGeometry g = scan_geometry(x.shape.h, x.shape.w, kh, kw, st, pad);
  Tensor<S> out({x.shape.n, f, g.out_h, g.out_w});

  ConstRowMatMap<S> wm(w.data.data(), f, w.shape.c * kh * kw);
  RowMat<S> cols;
  for (Index n = 0; n < x.shape.n; ++n) {
    detail::im2col(x, n, kh, kw, st, g, cols);
    auto om = out.item(n);
    om.noalias() = wm * cols;
    if (bias != nullptr) {
      om.colwise() += VecX<S>(bias->data.matrix());
    }
  }
  return out;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const ConvKernel<S>& k, Stride2 st, Padding pad) {
  return conv2d(x, k.weights, &k.bias, st, pad);
}

/// Bias-free convolution.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, Stride2 st, Padding pad) {
  return conv2d(x, w, static_cast<const Tensor<S>*>(nullptr), st, pad);
}

/// Reference convolution: direct nested loops, no layout tricks. Kept fully
/// independent of the lowered path above, including its own geometry.
template <typename S>
Tensor<S> conv2d_oracle(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias,
                        Stride2 st, Padding pad) {
  detail::check_conv_args(x, w, bias);
  check_shape(st.h >= 1 && st.w >= 1, "stride components must be >= 1");
  const Index f = w.shape.n, c = w.shape.c, kh = w.shape.h, kw = w.shape.w;
  const Index h = x.shape.h, iw = x.shape.w;

  Index out_h, out_w, pad_top, pad_left;
  if (pad == Padding::Valid) {
    check_shape(h >= kh && iw >= kw,
                "valid padding: spatial dims smaller than the window");
    out_h = (h - kh) / st.h + 1;
    out_w = (iw - kw) / st.w + 1;
    pad_top = pad_left = 0;
  } else {
    out_h = (h + st.h - 1) / st.h;
    out_w = (iw + st.w - 1) / st.w;
    pad_top = std::max<Index>((out_h - 1) * st.h + kh - h, 0) / 2;
    pad_left = std::max<Index>((out_w - 1) * st.w + kw - iw, 0) / 2;
  }

  Tensor<S> out({x.shape.n, f, out_h, out_w});
  for (Index n = 0; n < x.shape.n; ++n) {
    for (Index fo = 0; fo < f; ++fo) {
      for (Index oy = 0; oy < out_h; ++oy) {
        for (Index ox = 0; ox < out_w; ++ox) {
          S acc = bias != nullptr ? bias->data[fo] : S(0);
          for (Index ch = 0; ch < c; ++ch) {
            for (Index ky = 0; ky < kh; ++ky) {
              const Index iy = oy * st.h - pad_top + ky;
              if (iy < 0 || iy >= h) continue;
              for (Index kx = 0; kx < kw; ++kx) {
                const Index ix = ox * st.w - pad_left + kx;
                if (ix < 0 || ix >= iw) continue;
                acc += x.at(n, ch, iy, ix) * w.at(fo, ch, ky, kx);
              }
            }
          }
          out.at(n, fo, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> conv2d_oracle(const Tensor<S>& x, const ConvKernel<S>& k, Stride2 st,
                        Padding pad) {
  return conv2d_oracle(x, k.weights, &k.bias, st, pad);
}

/// dL/dx of conv2d: scatter the column gradient back through the patch map.
template <typename S>
Tensor<S> conv2d_grad_input(const Tensor<S>& dy, const Tensor<S>& w, Shape x_shape,
                            Stride2 st, Padding pad) {
  const Index f = w.shape.n, kh = w.shape.h, kw = w.shape.w;
  const ScanGeometry g = scan_geometry(x_shape.h, x_shape.w, kh, kw, st, pad);
  Tensor<S> dx(x_shape);
  ConstRowMatMap<S> wm(w.data.data(), f, w.shape.c * kh * kw);
  RowMat<S> dcols;
  for (Index n = 0; n < x_shape.n; ++n) {
    dcols.noalias() = wm.transpose() * dy.item(n);
    detail::col2im(dcols, n, kh, kw, st, g, dx);
  }
  return dx;
}

/// dL/dw of conv2d. The patch matrix is recomputed rather than cached so the
/// forward pass does not have to hold it for every recorded node.
template <typename S>
Tensor<S> conv2d_grad_weights(const Tensor<S>& dy, const Tensor<S>& x, Shape w_shape,
                              Stride2 st, Padding pad) {
  const Index f = w_shape.n, kh = w_shape.h, kw = w_shape.w;
  const ScanGeometry g = scan_geometry(x.shape.h, x.shape.w, kh, kw, st, pad);
  Tensor<S> dw(w_shape);
  RowMatMap<S> dwm(dw.data.data(), f, w_shape.c * kh * kw);
  RowMat<S> cols;
  for (Index n = 0; n < x.shape.n; ++n) {
    detail::im2col(x, n, kh, kw, st, g, cols);
    dwm.noalias() += dy.item(n) * cols.transpose();
  }
  return dw;
}

template <typename S>
Tensor<S> conv2d_grad_bias(const Tensor<S>& dy) {
  Tensor<S> db({1, dy.shape.c, 1, 1});
  for (Index n = 0; n < dy.shape.n; ++n) {
    db.data.matrix() += dy.item(n).rowwise().sum();
  }
  return db;
}

/// Overlapped max pooling, valid (no padding). Records the winning input
/// offset per output element when argmax is supplied.
template <typename S>
Tensor<S> max_pool(const Tensor<S>& x, Window2 win, Stride2 st,
                   std::vector<std::int64_t>* argmax = nullptr) {
  check_shape(x.shape.h >= win.h && x.shape.w >= win.w,
              "max_pool: spatial dims " + std::to_string(x.shape.h) + "x" +
                  std::to_string(x.shape.w) + " smaller than window");
  const ScanGeometry g = scan_geometry(x.shape.h, x.shape.w, win.h, win.w, st,
                                       Padding::Valid);
  Tensor<S> out({x.shape.n, x.shape.c, g.out_h, g.out_w});
  if (argmax != nullptr) argmax->assign(out.size(), -1);
  Index o = 0;
  for (Index n = 0; n < x.shape.n; ++n) {
    for (Index c = 0; c < x.shape.c; ++c) {
      for (Index oy = 0; oy < g.out_h; ++oy) {
        for (Index ox = 0; ox < g.out_w; ++ox, ++o) {
          S best{};
          Index best_at = -1;
          for (Index ky = 0; ky < win.h; ++ky) {
            for (Index kx = 0; kx < win.w; ++kx) {
              const Index iy = oy * st.h + ky, ix = ox * st.w + kx;
              const S v = x.at(n, c, iy, ix);
              if (best_at < 0 || v > best) {
                best = v;
                best_at = x.offset(n, c, iy, ix);
              }
            }
          }
          out.data[o] = best;
          if (argmax != nullptr) (*argmax)[o] = best_at;
        }
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> max_pool_grad(const Tensor<S>& dy, const std::vector<std::int64_t>& argmax,
                        Shape x_shape) {
  Tensor<S> dx(x_shape);
  for (Index i = 0; i < dy.size(); ++i) dx.data[argmax[i]] += dy.data[i];
  return dx;
}

/// Average pooling; with same padding the divisor counts only in-bounds
/// elements, so constant inputs stay constant at the edges.
template <typename S>
Tensor<S> avg_pool(const Tensor<S>& x, Window2 win, Stride2 st,
                   Padding pad = Padding::Same) {
  const ScanGeometry g = scan_geometry(x.shape.h, x.shape.w, win.h, win.w, st, pad);
  Tensor<S> out({x.shape.n, x.shape.c, g.out_h, g.out_w});
  Index o = 0;
  for (Index n = 0; n < x.shape.n; ++n) {
    for (Index c = 0; c < x.shape.c; ++c) {
      for (Index oy = 0; oy < g.out_h; ++oy) {
        for (Index ox = 0; ox < g.out_w; ++ox, ++o) {
          S acc = 0;
          Index cnt = 0;
          for (Index ky = 0; ky < win.h; ++ky) {
            const Index iy = oy * st.h - g.pad_top + ky;
            if (iy < 0 || iy >= x.shape.h) continue;
            for (Index kx = 0; kx < win.w; ++kx) {
              const Index ix = ox * st.w - g.pad_left + kx;
              if (ix < 0 || ix >= x.shape.w) continue;
              acc += x.at(n, c, iy, ix);
              ++cnt;
            }
          }
          out.data[o] = acc / static_cast<S>(cnt);
        }
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> avg_pool_grad(const Tensor<S>& dy, Shape x_shape, Window2 win, Stride2 st,
                        Padding pad = Padding::Same) {
  const ScanGeometry g = scan_geometry(x_shape.h, x_shape.w, win.h, win.w, st, pad);
  Tensor<S> dx(x_shape);
  Index o = 0;
  for (Index n = 0; n < x_shape.n; ++n) {
    for (Index c = 0; c < x_shape.c; ++c) {
      for (Index oy = 0; oy < g.out_h; ++oy) {
        for (Index ox = 0; ox < g.out_w; ++ox, ++o) {
          Index cnt = 0;
          for (Index ky = 0; ky < win.h; ++ky) {
            const Index iy = oy * st.h - g.pad_top + ky;
            if (iy < 0 || iy >= x_shape.h) continue;
            for (Index kx = 0; kx < win.w; ++kx) {
              const Index ix = ox * st.w - g.pad_left + kx;
              if (ix >= 0 && ix < x_shape.w) ++cnt;
            }
          }
          const S share = dy.data[o] / static_cast<S>(cnt);
          for (Index ky = 0; ky < win.h; ++ky) {
            const Index iy = oy * st.h - g.pad_top + ky;
            if (iy < 0 || iy >= x_shape.h) continue;
            for (Index kx = 0; kx < win.w; ++kx) {
              const Index ix = ox * st.w - g.pad_left + kx;
              if (ix >= 0 && ix < x_shape.w) dx.at(n, c, iy, ix) += share;
            }
          }
        }
      }
    }
  }
  return dx;
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  Tensor<S> out({x.shape.n, x.shape.c, 1, 1});
  const S inv = S(1) / static_cast<S>(x.shape.h * x.shape.w);
  for (Index n = 0; n < x.shape.n; ++n) {
    out.item(n).col(0).noalias() = x.item(n).rowwise().sum() * inv;
  }
  return out;
}

template <typename S>
Tensor<S> global_avg_pool_grad(const Tensor<S>& dy, Shape x_shape) {
  Tensor<S> dx(x_shape);
  const S inv = S(1) / static_cast<S>(x_shape.h * x_shape.w);
  for (Index n = 0; n < x_shape.n; ++n) {
    dx.item(n).colwise() = VecX<S>(dy.item(n).col(0) * inv);
  }
  return dx;
}

/// Channel-axis concatenation; values are copied bit-identically in list order.
template <typename S>
Tensor<S> concat_channels(const std::vector<const Tensor<S>*>& parts) {
  check_shape(!parts.empty(), "concat_channels: no parts");
  const Shape& s0 = parts.front()->shape;
  Index c_total = 0;
  for (const Tensor<S>* p : parts) {
    check_shape(p->shape.n == s0.n && p->shape.h == s0.h && p->shape.w == s0.w,
                "concat_channels: batch/spatial mismatch " + p->shape.str() +
                    " vs " + s0.str());
    c_total += p->shape.c;
  }
  Tensor<S> out({s0.n, c_total, s0.h, s0.w});
  for (Index n = 0; n < s0.n; ++n) {
    Index row = 0;
    for (const Tensor<S>* p : parts) {
      out.item(n).middleRows(row, p->shape.c) = p->item(n);
      row += p->shape.c;
    }
  }
  return out;
}

/// Channels [c0, c0+count) of x, as a standalone tensor.
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, Index c0, Index count) {
  check_shape(c0 >= 0 && c0 + count <= x.shape.c, "slice_channels: range out of bounds");
  Tensor<S> out({x.shape.n, count, x.shape.h, x.shape.w});
  for (Index n = 0; n < x.shape.n; ++n) {
    out.item(n) = x.item(n).middleRows(c0, count);
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_shape(a.shape == b.shape, "add: shape mismatch " + a.shape.str() + " vs " +
                                      b.shape.str());
  Tensor<S> out;
  out.shape = a.shape;
  out.data = a.data + b.data;
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> out;
  out.shape = x.shape;
  out.data = x.data.max(S(0));
  return out;
}

/// Subgradient with relu'(0) = 0.
template <typename S>
Tensor<S> relu_grad(const Tensor<S>& dy, const Tensor<S>& x) {
  Tensor<S> dx;
  dx.shape = x.shape;
  dx.data = (x.data > S(0)).select(dy.data, ArrayX<S>::Zero(x.size()));
  return dx;
}

template <typename S>
Tensor<S> elu(const Tensor<S>& x, S alpha = S(1)) {
  Tensor<S> out;
  out.shape = x.shape;
  out.data = (x.data >= S(0)).select(x.data, alpha * (x.data.exp() - S(1)));
  return out;
}

template <typename S>
Tensor<S> elu_grad(const Tensor<S>& dy, const Tensor<S>& x, S alpha = S(1)) {
  Tensor<S> dx;
  dx.shape = x.shape;
  dx.data = dy.data * (x.data >= S(0))
                          .select(ArrayX<S>::Ones(x.size()), alpha * x.data.exp());
  return dx;
}

/// Row softmax over the channel axis of (n, K, 1, 1) logits, computed
/// shift-invariantly (max logit subtracted) for stability.
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  check_shape(logits.shape.h == 1 && logits.shape.w == 1,
              "softmax: expects (n,K,1,1) logits");
  Tensor<S> out;
  out.shape = logits.shape;
  out.data.resize(logits.size());
  const Index k = logits.shape.c;
  for (Index n = 0; n < logits.shape.n; ++n) {
    auto row = logits.data.segment(n * k, k);
    ArrayX<S> e = (row - row.maxCoeff()).exp();
    out.data.segment(n * k, k) = e / e.sum();
  }
  return out;
}

/// dL/dlogits given dL/dprobs and the forward probabilities.
template <typename S>
Tensor<S> softmax_grad(const Tensor<S>& dy, const Tensor<S>& probs) {
  Tensor<S> dx;
  dx.shape = probs.shape;
  dx.data.resize(probs.size());
  const Index k = probs.shape.c;
  for (Index n = 0; n < probs.shape.n; ++n) {
    auto p = probs.data.segment(n * k, k);
    auto g = dy.data.segment(n * k, k);
    const S dot = (g * p).sum();
    dx.data.segment(n * k, k) = p * (g - dot);
  }
  return dx;
}

template <typename S>
bool all_finite(const Tensor<S>& t) {
  return t.data.isFinite().all();
}

}  // namespace irrcnn
