#pragma once

#include <limits>

#include "seqseg/gemm.hpp"
#include "seqseg/tensor.hpp"

namespace seqseg {

constexpr int kIgnoreLabel = 255;

// Integer class-id map, NHW. Values in [0, K-1] or kIgnoreLabel.
struct LabelMap {
  int n = 1, h = 0, w = 0;
  std::vector<int32_t> v;

  static LabelMap zeros(int n, int h, int w) {
    LabelMap m;
    m.n = n;
    m.h = h;
    m.w = w;
    m.v.assign(1LL * n * h * w, 0);
    return m;
  }

  long long numel() const { return 1LL * n * h * w; }
  int32_t& at(int in, int iy, int ix) { return v[(1LL * in * h + iy) * w + ix]; }
  int32_t at(int in, int iy, int ix) const { return v[(1LL * in * h + iy) * w + ix]; }
};

namespace detail {

// col layout: (C*kh*kw) rows x (OH*OW) cols.
template <class S>
void im2col(const S* im, int c, int h, int w, int kh, int kw, int stride, int pad,
            int dil, int oh, int ow, S* col) {
  for (int ic = 0; ic < c; ++ic) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        S* dst = col + ((1LL * ic * kh + ky) * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, S(0));
            dst += ow;
            continue;
          }
          const S* src = im + (1LL * ic * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kx * dil;
            *dst++ = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im(const S* col, int c, int h, int w, int kh, int kw, int stride, int pad,
            int dil, int oh, int ow, S* im) {
  for (int ic = 0; ic < c; ++ic) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const S* src = col + ((1LL * ic * kh + ky) * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= h) {
            src += ow;
            continue;
          }
          S* dst = im + (1LL * ic * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kx * dil;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
          src += ow;
        }
      }
    }
  }
}

inline int conv_out_dim(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

}  // namespace detail

// im2col + GEMM convolution. Bias may be an undefined tensor.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int stride, int pad, int dilation) {
  SS_CHECK(stride >= 1 && dilation >= 1, "conv2d: stride/dilation must be >= 1");
  SS_CHECK(w.shape.h % 2 == 1 && w.shape.w % 2 == 1,
           "conv2d: kernel dims must be odd, got " << w.shape.str());
  SS_CHECK(x.shape.c == w.shape.c,
           "conv2d: input channels " << x.shape.c << " != kernel in-channels " << w.shape.c);
  if (b.defined())
    SS_CHECK(b.numel() == w.shape.n,
             "conv2d: bias length " << b.numel() << " != out-channels " << w.shape.n);

  const int n = x.shape.n, cin = x.shape.c, h = x.shape.h, ww = x.shape.w;
  const int cout = w.shape.n, kh = w.shape.h, kw = w.shape.w;
  const int oh = detail::conv_out_dim(h, kh, stride, pad, dilation);
  const int ow = detail::conv_out_dim(ww, kw, stride, pad, dilation);
  SS_CHECK(oh > 0 && ow > 0, "conv2d: empty output for input " << x.shape.str());
  const int ck = cin * kh * kw;
  const long long ohw = 1LL * oh * ow;

  Tensor<S> out(Shape{n, cout, oh, ow});
  std::vector<S> col(1LL * ck * ohw);
  for (int in = 0; in < n; ++in) {
    detail::im2col(x.data() + 1LL * in * cin * h * ww, cin, h, ww, kh, kw, stride, pad,
                   dilation, oh, ow, col.data());
    S* po = out.data() + 1LL * in * cout * ohw;
    gemm(false, false, cout, (int)ohw, ck, S(1), w.data(), ck, col.data(), (int)ohw,
         S(0), po, (int)ohw);
    if (b.defined()) {
      for (int oc = 0; oc < cout; ++oc) {
        S bias = b.data()[oc];
        S* row = po + oc * ohw;
        for (long long i = 0; i < ohw; ++i) row[i] += bias;
      }
    }
  }

  Tape<S>* tp = x.tape ? x.tape : (w.tape ? w.tape : (b.defined() ? b.tape : nullptr));
  if (x.tape && w.tape) SS_CHECK(x.tape == w.tape, "conv2d: operands on different tapes");
  if (tp) {
    int xn = x.node, wn = w.node, bn = b.defined() ? b.node : -1;
    int on = tp->size();
    auto sx = x.store;
    auto sw = w.store;
    Shape xs = x.shape;
    out.tape = tp;
    out.node = tp->record(
        out.shape, [xn, wn, bn, on, sx, sw, xs, cout, kh, kw, stride, pad, dilation, oh,
                    ow](Tape<S>& t) {
          const auto& go = t.grad(on);
          const int cin = xs.c, ck = cin * kh * kw;
          const long long ohw = 1LL * oh * ow;
          std::vector<S> col(1LL * ck * ohw);
          for (int in = 0; in < xs.n; ++in) {
            const S* pg = go.data() + 1LL * in * cout * ohw;
            if (wn >= 0 || bn >= 0 || xn >= 0) {
              if (wn >= 0) {
                detail::im2col(sx->data() + 1LL * in * cin * xs.h * xs.w, cin, xs.h, xs.w,
                               kh, kw, stride, pad, dilation, oh, ow, col.data());
                gemm(false, true, cout, ck, (int)ohw, S(1), pg, (int)ohw, col.data(),
                     (int)ohw, S(1), t.grad(wn).data(), ck);
              }
              if (bn >= 0) {
                auto& gb = t.grad(bn);
                for (int oc = 0; oc < cout; ++oc) {
                  S acc = 0;
                  const S* row = pg + oc * ohw;
                  for (long long i = 0; i < ohw; ++i) acc += row[i];
                  gb[oc] += acc;
                }
              }
              if (xn >= 0) {
                gemm(true, false, ck, (int)ohw, cout, S(1), sw->data(), ck, pg, (int)ohw,
                     S(0), col.data(), (int)ohw);
                detail::col2im(col.data(), cin, xs.h, xs.w, kh, kw, stride, pad, dilation,
                               oh, ow, t.grad(xn).data() + 1LL * in * cin * xs.h * xs.w);
              }
            }
          }
        });
  }
  return out;
}

// Direct 6-loop convolution, kept as the permanent correctness oracle for the
// GEMM path. Never records on a tape.
template <class S>
Tensor<S> conv2d_reference(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                           int stride, int pad, int dilation) {
  const int n = x.shape.n, cin = x.shape.c, h = x.shape.h, ww = x.shape.w;
  const int cout = w.shape.n, kh = w.shape.h, kw = w.shape.w;
  const int oh = detail::conv_out_dim(h, kh, stride, pad, dilation);
  const int ow = detail::conv_out_dim(ww, kw, stride, pad, dilation);
  Tensor<S> out(Shape{n, cout, oh, ow});
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < cout; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          S acc = b.defined() ? b.data()[oc] : S(0);
          for (int ic = 0; ic < cin; ++ic)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                int iy = oy * stride - pad + ky * dilation;
                int ix = ox * stride - pad + kx * dilation;
                if (iy >= 0 && iy < h && ix >= 0 && ix < ww)
                  acc += x.at(in, ic, iy, ix) * w.at(oc, ic, ky, kx);
              }
          out.at(in, oc, oy, ox) = acc;
        }
  return out;
}

// Flat offsets (into the pool input buffer) of each window's winner.
struct PoolIndices {
  Shape input_shape;
  std::vector<int64_t> idx;
};

// 2x2/stride-2 max pooling. Ties break to the first cell in row-major scan
// order, so the result is oracle-reproducible.
template <class S>
std::pair<Tensor<S>, PoolIndices> maxpool2x2_with_indices(const Tensor<S>& x) {
  SS_CHECK(x.shape.h % 2 == 0 && x.shape.w % 2 == 0,
           "maxpool2x2: spatial dims must be even, got " << x.shape.str());
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  const int oh = h / 2, ow = w / 2;
  Tensor<S> out(Shape{n, c, oh, ow});
  PoolIndices pi;
  pi.input_shape = x.shape;
  pi.idx.resize(out.numel());
  const S* px = x.data();
  S* po = out.data();
  long long o = 0;
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const S* plane = px + (1LL * in * c + ic) * h * w;
      long long base = (1LL * in * c + ic) * h * w;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          S best = -std::numeric_limits<S>::infinity();
          long long besti = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              long long off = 1LL * (2 * oy + dy) * w + (2 * ox + dx);
              if (plane[off] > best) {
                best = plane[off];
                besti = base + off;
              }
            }
          po[o] = best;
          pi.idx[o] = besti;
        }
    }
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    auto idx = std::make_shared<std::vector<int64_t>>(pi.idx);
    out.tape = x.tape;
    out.node = x.tape->record(out.shape, [xn, on, idx](Tape<S>& t) {
      const auto& go = t.grad(on);
      auto& gx = t.grad(xn);
      for (size_t i = 0; i < go.size(); ++i) gx[(*idx)[i]] += go[i];
    });
  }
  return {out, pi};
}

// Places each value at its recorded argmax position; everything else is 0.
template <class S>
Tensor<S> max_unpool2x2(const Tensor<S>& x, const PoolIndices& pi) {
  Shape expect{pi.input_shape.n, pi.input_shape.c, pi.input_shape.h / 2,
               pi.input_shape.w / 2};
  SS_CHECK(x.shape == expect, "max_unpool2x2: input " << x.shape.str()
                                                      << " does not match indices from pool input "
                                                      << pi.input_shape.str());
  Tensor<S> out(pi.input_shape);
  const S* px = x.data();
  S* po = out.data();
  for (long long i = 0; i < x.numel(); ++i) po[pi.idx[i]] = px[i];
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    auto idx = std::make_shared<std::vector<int64_t>>(pi.idx);
    out.tape = x.tape;
    out.node = x.tape->record(out.shape, [xn, on, idx](Tape<S>& t) {
      const auto& go = t.grad(on);
      auto& gx = t.grad(xn);
      for (size_t i = 0; i < idx->size(); ++i) gx[i] += go[(*idx)[i]];
    });
  }
  return out;
}

template <class S>
Tensor<S> avgpool2x2(const Tensor<S>& x) {
  SS_CHECK(x.shape.h % 2 == 0 && x.shape.w % 2 == 0,
           "avgpool2x2: spatial dims must be even, got " << x.shape.str());
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  Tensor<S> out(Shape{n, c, h / 2, w / 2});
  S* po = out.data();
  const S* px = x.data();
  long long o = 0;
  for (long long plane = 0; plane < 1LL * n * c; ++plane) {
    const S* p = px + plane * h * w;
    for (int oy = 0; oy < h / 2; ++oy)
      for (int ox = 0; ox < w / 2; ++ox, ++o)
        po[o] = (p[1LL * 2 * oy * w + 2 * ox] + p[1LL * 2 * oy * w + 2 * ox + 1] +
                 p[1LL * (2 * oy + 1) * w + 2 * ox] + p[1LL * (2 * oy + 1) * w + 2 * ox + 1]) /
                S(4);
  }
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    int nn = n, cc = c, hh = h, ww = w;
    out.tape = x.tape;
    out.node = x.tape->record(out.shape, [xn, on, nn, cc, hh, ww](Tape<S>& t) {
      const auto& go = t.grad(on);
      auto& gx = t.grad(xn);
      long long o = 0;
      for (long long plane = 0; plane < 1LL * nn * cc; ++plane) {
        S* g = gx.data() + plane * hh * ww;
        for (int oy = 0; oy < hh / 2; ++oy)
          for (int ox = 0; ox < ww / 2; ++ox, ++o) {
            S q = go[o] / S(4);
            g[1LL * 2 * oy * ww + 2 * ox] += q;
            g[1LL * 2 * oy * ww + 2 * ox + 1] += q;
            g[1LL * (2 * oy + 1) * ww + 2 * ox] += q;
            g[1LL * (2 * oy + 1) * ww + 2 * ox + 1] += q;
          }
      }
    });
  }
  return out;
}

// Adaptive average pooling to a bins x bins grid. floor/ceil window bounds
// keep every window non-empty even when bins exceed the spatial dims.
template <class S>
Tensor<S> adaptive_avg_pool(const Tensor<S>& x, int bins) {
  SS_CHECK(bins >= 1, "adaptive_avg_pool: bad bins " << bins);
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  Tensor<S> out(Shape{n, c, bins, bins});
  auto lo = [](int i, int dim, int bins) { return (int)(1LL * i * dim / bins); };
  auto hi = [](int i, int dim, int bins) {
    return (int)((1LL * (i + 1) * dim + bins - 1) / bins);
  };
  for (long long plane = 0; plane < 1LL * n * c; ++plane) {
    const S* p = x.data() + plane * h * w;
    S* po = out.data() + plane * bins * bins;
    for (int by = 0; by < bins; ++by)
      for (int bx = 0; bx < bins; ++bx) {
        int y0 = lo(by, h, bins), y1 = hi(by, h, bins);
        int x0 = lo(bx, w, bins), x1 = hi(bx, w, bins);
        S acc = 0;
        for (int iy = y0; iy < y1; ++iy)
          for (int ix = x0; ix < x1; ++ix) acc += p[1LL * iy * w + ix];
        po[1LL * by * bins + bx] = acc / S((y1 - y0) * (x1 - x0));
      }
  }
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    int nn = n, cc = c, hh = h, ww = w;
    out.tape = x.tape;
    out.node = x.tape->record(out.shape, [xn, on, nn, cc, hh, ww, bins, lo, hi](Tape<S>& t) {
      const auto& go = t.grad(on);
      auto& gx = t.grad(xn);
      for (long long plane = 0; plane < 1LL * nn * cc; ++plane) {
        S* g = gx.data() + plane * hh * ww;
        const S* pg = go.data() + plane * bins * bins;
        for (int by = 0; by < bins; ++by)
          for (int bx = 0; bx < bins; ++bx) {
            int y0 = lo(by, hh, bins), y1 = hi(by, hh, bins);
            int x0 = lo(bx, ww, bins), x1 = hi(bx, ww, bins);
            S q = pg[1LL * by * bins + bx] / S((y1 - y0) * (x1 - x0));
            for (int iy = y0; iy < y1; ++iy)
              for (int ix = x0; ix < x1; ++ix) g[1LL * iy * ww + ix] += q;
          }
      }
    });
  }
  return out;
}

// Nearest-neighbor resize to an arbitrary spatial size.
template <class S>
Tensor<S> nearest_resize(const Tensor<S>& x, int oh, int ow) {
  SS_CHECK(oh >= 1 && ow >= 1, "nearest_resize: bad target " << oh << "x" << ow);
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  Tensor<S> out(Shape{n, c, oh, ow});
  std::vector<int> sy(oh), sx(ow);
  for (int i = 0; i < oh; ++i) sy[i] = (int)std::min<long long>(h - 1, 1LL * i * h / oh);
  for (int i = 0; i < ow; ++i) sx[i] = (int)std::min<long long>(w - 1, 1LL * i * w / ow);
  for (long long plane = 0; plane < 1LL * n * c; ++plane) {
    const S* p = x.data() + plane * h * w;
    S* po = out.data() + plane * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) po[1LL * oy * ow + ox] = p[1LL * sy[oy] * w + sx[ox]];
  }
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    int nn = n, cc = c, hh = h, ww = w;
    out.tape = x.tape;
    out.node = x.tape->record(out.shape, [xn, on, nn, cc, hh, ww, oh, ow, sy, sx](Tape<S>& t) {
      const auto& go = t.grad(on);
      auto& gx = t.grad(xn);
      for (long long plane = 0; plane < 1LL * nn * cc; ++plane) {
        S* g = gx.data() + plane * hh * ww;
        const S* pg = go.data() + plane * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) g[1LL * sy[oy] * ww + sx[ox]] += pg[1LL * oy * ow + ox];
      }
    });
  }
  return out;
}

namespace detail {

// align-corners=false source coordinate with border clamping.
template <class S>
inline void bilinear_axis(int out_len, int in_len, int factor, int i, int& i0, int& i1, S& frac) {
  (void)out_len;
  S src = (S(i) + S(0.5)) / S(factor) - S(0.5);
  S fl = std::floor(src);
  frac = src - fl;
  i0 = std::clamp((int)fl, 0, in_len - 1);
  i1 = std::clamp((int)fl + 1, 0, in_len - 1);
}

}  // namespace detail

// Bilinear upsampling by 2 or 4, half-pixel-center (align-corners=false)
// convention.
template <class S>
Tensor<S> bilinear_upsample(const Tensor<S>& x, int factor) {
  SS_CHECK(factor == 2 || factor == 4, "bilinear_upsample: unsupported factor " << factor);
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  const int oh = h * factor, ow = w * factor;
  Tensor<S> out(Shape{n, c, oh, ow});
  std::vector<int> y0(oh), y1(oh), x0(ow), x1(ow);
  std::vector<S> fy(oh), fx(ow);
  for (int i = 0; i < oh; ++i) detail::bilinear_axis<S>(oh, h, factor, i, y0[i], y1[i], fy[i]);
  for (int i = 0; i < ow; ++i) detail::bilinear_axis<S>(ow, w, factor, i, x0[i], x1[i], fx[i]);
  for (long long plane = 0; plane < 1LL * n * c; ++plane) {
    const S* p = x.data() + plane * h * w;
    S* po = out.data() + plane * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        S a = p[1LL * y0[oy] * w + x0[ox]], b = p[1LL * y0[oy] * w + x1[ox]];
        S cc = p[1LL * y1[oy] * w + x0[ox]], d = p[1LL * y1[oy] * w + x1[ox]];
        S top = a + fx[ox] * (b - a);
        S bot = cc + fx[ox] * (d - cc);
        po[1LL * oy * ow + ox] = top + fy[oy] * (bot - top);
      }
  }
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    int nn = n, cc = c, hh = h, ww = w;
    out.tape = x.tape;
    out.node = x.tape->record(
        out.shape, [xn, on, nn, cc, hh, ww, oh, ow, y0, y1, x0, x1, fy, fx](Tape<S>& t) {
          const auto& go = t.grad(on);
          auto& gx = t.grad(xn);
          for (long long plane = 0; plane < 1LL * nn * cc; ++plane) {
            S* g = gx.data() + plane * hh * ww;
            const S* pg = go.data() + plane * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
              for (int ox = 0; ox < ow; ++ox) {
                S gv = pg[1LL * oy * ow + ox];
                S wy1 = fy[oy], wy0 = S(1) - wy1;
                S wx1 = fx[ox], wx0 = S(1) - wx1;
                g[1LL * y0[oy] * ww + x0[ox]] += gv * wy0 * wx0;
                g[1LL * y0[oy] * ww + x1[ox]] += gv * wy0 * wx1;
                g[1LL * y1[oy] * ww + x0[ox]] += gv * wy1 * wx0;
                g[1LL * y1[oy] * ww + x1[ox]] += gv * wy1 * wx1;
              }
          }
        });
  }
  return out;
}

// Per-pixel softmax over channels with max subtraction.
template <class S>
Tensor<S> softmax_channels(const Tensor<S>& x) {
  SS_CHECK(x.shape.c >= 2, "softmax_channels: need >= 2 channels, got " << x.shape.str());
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  const long long hw = 1LL * h * w;
  Tensor<S> out(x.shape);
  for (int in = 0; in < n; ++in) {
    const S* px = x.data() + 1LL * in * c * hw;
    S* po = out.data() + 1LL * in * c * hw;
    for (long long p = 0; p < hw; ++p) {
      S m = px[p];
      for (int ic = 1; ic < c; ++ic) m = std::max(m, px[ic * hw + p]);
      S z = 0;
      for (int ic = 0; ic < c; ++ic) {
        S e = std::exp(px[ic * hw + p] - m);
        po[ic * hw + p] = e;
        z += e;
      }
      for (int ic = 0; ic < c; ++ic) po[ic * hw + p] /= z;
    }
  }
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    auto sy = out.store;
    int nn = n, cc = c;
    out.tape = x.tape;
    out.node = x.tape->record(out.shape, [xn, on, sy, nn, cc, hw](Tape<S>& t) {
      const auto& go = t.grad(on);
      auto& gx = t.grad(xn);
      for (int in = 0; in < nn; ++in) {
        const S* y = sy->data() + 1LL * in * cc * hw;
        const S* g = go.data() + 1LL * in * cc * hw;
        S* d = gx.data() + 1LL * in * cc * hw;
        for (long long p = 0; p < hw; ++p) {
          S dot = 0;
          for (int ic = 0; ic < cc; ++ic) dot += g[ic * hw + p] * y[ic * hw + p];
          for (int ic = 0; ic < cc; ++ic)
            d[ic * hw + p] += y[ic * hw + p] * (g[ic * hw + p] - dot);
        }
      }
    });
  }
  return out;
}

// Mean negative log-likelihood over non-ignored pixels, from raw logits
// (log-softmax applied internally). All pixels ignored -> 0 loss, 0 gradient.
template <class S>
Tensor<S> cross_entropy_loss(const Tensor<S>& logits, const LabelMap& labels) {
  SS_CHECK(logits.shape.n == labels.n && logits.shape.h == labels.h &&
               logits.shape.w == labels.w,
           "cross_entropy_loss: logits " << logits.shape.str() << " vs labels ("
                                         << labels.n << "," << labels.h << "," << labels.w
                                         << ")");
  const int n = logits.shape.n, c = logits.shape.c, h = logits.shape.h, w = logits.shape.w;
  const long long hw = 1LL * h * w;
  long long count = 0;
  double loss = 0;
  for (int in = 0; in < n; ++in) {
    const S* px = logits.data() + 1LL * in * c * hw;
    for (long long p = 0; p < hw; ++p) {
      int32_t lab = labels.v[in * hw + p];
      if (lab == kIgnoreLabel) continue;
      SS_CHECK(lab >= 0 && lab < c, "cross_entropy_loss: label " << lab << " out of range [0,"
                                                                 << c - 1 << "]");
      S m = px[p];
      for (int ic = 1; ic < c; ++ic) m = std::max(m, px[ic * hw + p]);
      S z = 0;
      for (int ic = 0; ic < c; ++ic) z += std::exp(px[ic * hw + p] - m);
      loss += (double)(std::log(z) + m - px[lab * hw + p]);
      ++count;
    }
  }
  Tensor<S> out(Shape{1, 1, 1, 1});
  out.data()[0] = count > 0 ? S(loss / (double)count) : S(0);
  if (logits.tape && count == 0) {
    // all pixels ignored: zero loss with a structurally zero gradient
    out.tape = logits.tape;
    out.node = logits.tape->record(out.shape, [](Tape<S>&) {});
    return out;
  }
  if (logits.tape && count > 0) {
    int xn = logits.node, on = logits.tape->size();
    auto sx = logits.store;
    auto labs = std::make_shared<std::vector<int32_t>>(labels.v);
    int nn = n, cc = c;
    out.tape = logits.tape;
    out.node = logits.tape->record(out.shape, [xn, on, sx, labs, nn, cc, hw, count](Tape<S>& t) {
      S g = t.grad(on)[0] / S(count);
      auto& gx = t.grad(xn);
      for (int in = 0; in < nn; ++in) {
        const S* px = sx->data() + 1LL * in * cc * hw;
        S* d = gx.data() + 1LL * in * cc * hw;
        for (long long p = 0; p < hw; ++p) {
          int32_t lab = (*labs)[in * hw + p];
          if (lab == kIgnoreLabel) continue;
          S m = px[p];
          for (int ic = 1; ic < cc; ++ic) m = std::max(m, px[ic * hw + p]);
          S z = 0;
          for (int ic = 0; ic < cc; ++ic) z += std::exp(px[ic * hw + p] - m);
          for (int ic = 0; ic < cc; ++ic) {
            S sm = std::exp(px[ic * hw + p] - m) / z;
            d[ic * hw + p] += g * (sm - (ic == lab ? S(1) : S(0)));
          }
        }
      }
    });
  }
  return out;
}

// Nearest-neighbor label downsampling (for cascade guidance heads).
inline LabelMap downsample_labels(const LabelMap& in, int oh, int ow) {
  LabelMap out = LabelMap::zeros(in.n, oh, ow);
  for (int n = 0; n < in.n; ++n)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        out.at(n, y, x) = in.at(n, (int)std::min<long long>(in.h - 1, 1LL * y * in.h / oh),
                                (int)std::min<long long>(in.w - 1, 1LL * x * in.w / ow));
  return out;
}

// Per-pixel argmax over channels.
template <class S>
LabelMap argmax_channels(const Tensor<S>& x) {
  LabelMap out = LabelMap::zeros(x.shape.n, x.shape.h, x.shape.w);
  const long long hw = 1LL * x.shape.h * x.shape.w;
  for (int n = 0; n < x.shape.n; ++n) {
    const S* p = x.data() + 1LL * n * x.shape.c * hw;
    for (long long i = 0; i < hw; ++i) {
      int best = 0;
      S bv = p[i];
      for (int c = 1; c < x.shape.c; ++c)
        if (p[c * hw + i] > bv) {
          bv = p[c * hw + i];
          best = c;
        }
      out.v[n * hw + i] = best;
    }
  }
  return out;
}

}  // namespace seqseg
