#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "qtseg/ops.hpp"
#include "qtseg/simd/kernels.hpp"

namespace qtseg::ops {
namespace {

struct ImageView {
  int64_t batch;
  int64_t channels;
  int64_t h;
  int64_t w;
  bool batched;
};

ImageView image_view(const char* op, const Tensor& x) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
  detail::fail_shape(op, "expected rank 3 or 4, got " + shape_str(x.shape()));
}

Shape image_shape(const ImageView& v, int64_t c, int64_t h, int64_t w) {
  return v.batched ? Shape{v.batch, c, h, w} : Shape{c, h, w};
}

// "Same" padding: output = ceil(in/stride); any odd padding goes to the
// bottom/right edge.
struct PadSpec {
  int64_t out;
  int64_t before;
};

PadSpec same_pad(int64_t in, int64_t k, int64_t stride) {
  const int64_t out = (in + stride - 1) / stride;
  const int64_t total = std::max<int64_t>((out - 1) * stride + k - in, 0);
  return {out, total / 2};
}

void im2col(const float* x, int64_t cin, int64_t h, int64_t w, int64_t k,
            int64_t stride, int64_t pad_top, int64_t pad_left, int64_t out_h,
            int64_t out_w, float* col) {
  const int64_t cols = out_h * out_w;
  for (int64_t c = 0; c < cin; ++c) {
    const float* xc = x + c * h * w;
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        float* row = col + ((c * k + ky) * k + kx) * cols;
        for (int64_t oy = 0; oy < out_h; ++oy) {
          const int64_t iy = oy * stride + ky - pad_top;
          float* dst = row + oy * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w, 0.0f);
            continue;
          }
          const float* src = xc + iy * w;
          for (int64_t ox = 0; ox < out_w; ++ox) {
            const int64_t ix = ox * stride + kx - pad_left;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_accum(const float* col, int64_t cin, int64_t h, int64_t w, int64_t k,
                  int64_t stride, int64_t pad_top, int64_t pad_left, int64_t out_h,
                  int64_t out_w, float* dx) {
  const int64_t cols = out_h * out_w;
  for (int64_t c = 0; c < cin; ++c) {
    float* xc = dx + c * h * w;
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        const float* row = col + ((c * k + ky) * k + kx) * cols;
        for (int64_t oy = 0; oy < out_h; ++oy) {
          const int64_t iy = oy * stride + ky - pad_top;
          if (iy < 0 || iy >= h) continue;
          const float* src = row + oy * out_w;
          float* dst = xc + iy * w;
          for (int64_t ox = 0; ox < out_w; ++ox) {
            const int64_t ix = ox * stride + kx - pad_left;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Nearest-neighbour source index: floor(dst * in / out), clamped.
int64_t nearest_src(int64_t dst, int64_t in, int64_t out) {
  const int64_t src = dst * in / out;
  return std::min(src, in - 1);
}

struct BilinearTap {
  int64_t lo;
  int64_t hi;
  float frac;
};

// Half-pixel-centre source mapping (align_corners = false), clamped to the
// valid range at the borders.
BilinearTap bilinear_tap(int64_t dst, int64_t in, int64_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  const int64_t lo = std::min(static_cast<int64_t>(src), in - 1);
  const int64_t hi = std::min(lo + 1, in - 1);
  return {lo, hi, static_cast<float>(src - static_cast<double>(lo))};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
              Padding padding) {
  const ImageView v = image_view("conv2d", x);
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
    detail::fail_shape("conv2d", "weight must be [Cout,Cin,K,K], got " +
                                     shape_str(w.shape()));
  }
  const int64_t cout = w.dim(0);
  const int64_t cin = w.dim(1);
  const int64_t k = w.dim(2);
  if (cin != v.channels) {
    detail::fail_shape("conv2d", "input has " + std::to_string(v.channels) +
                                     " channels, weight expects " + std::to_string(cin));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    detail::fail_shape("conv2d", "bias must be [" + std::to_string(cout) + "]");
  }
  if (stride <= 0) detail::fail_shape("conv2d", "stride must be positive");

  PadSpec ph{0, 0};
  PadSpec pw{0, 0};
  if (padding == Padding::kSame) {
    ph = same_pad(v.h, k, stride);
    pw = same_pad(v.w, k, stride);
  } else {
    if (v.h < k || v.w < k) {
      detail::fail_shape("conv2d", "valid padding needs input >= kernel");
    }
    ph = {(v.h - k) / stride + 1, 0};
    pw = {(v.w - k) / stride + 1, 0};
  }
  const int64_t out_h = ph.out;
  const int64_t out_w = pw.out;
  const int64_t cols = out_h * out_w;
  const int64_t ckk = cin * k * k;

  Tensor out = Tensor::zeros(image_shape(v, cout, out_h, out_w));
  std::vector<float> col(static_cast<size_t>(ckk * cols));
  const int64_t in_bs = v.channels * v.h * v.w;
  const int64_t out_bs = cout * cols;
  for (int64_t b = 0; b < v.batch; ++b) {
    im2col(x.data() + b * in_bs, cin, v.h, v.w, k, stride, ph.before, pw.before, out_h,
           out_w, col.data());
    float* ob = out.data() + b * out_bs;
    simd::gemm_nn(w.data(), col.data(), ob, cout, ckk, cols, false);
    if (bias.defined()) {
      const float* bv = bias.data();
      for (int64_t c = 0; c < cout; ++c) {
        float* row = ob + c * cols;
        for (int64_t i = 0; i < cols; ++i) row[i] += bv[c];
      }
    }
  }
  detail::check_finite(out, "conv2d");

  if (detail::want_grad({&x, &w, &bias})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, w, bias, out, v, cout, cin, k, stride, ph, pw, out_h,
                                out_w, cols, ckk, in_bs, out_bs]() mutable {
      // The column matrix is recomputed per image rather than kept alive
      // from the forward pass; it is the largest intermediate by far.
      std::vector<float> col2(static_cast<size_t>(ckk * cols));
      std::vector<float> dcol(static_cast<size_t>(ckk * cols));
      const float* dy = out.grad_data();
      for (int64_t b = 0; b < v.batch; ++b) {
        const float* dyb = dy + b * out_bs;
        if (w.requires_grad()) {
          im2col(x.data() + b * in_bs, cin, v.h, v.w, k, stride, ph.before, pw.before,
                 out_h, out_w, col2.data());
          simd::gemm_nt(dyb, col2.data(), w.grad_data(), cout, cols, ckk, true);
        }
        if (bias.defined() && bias.requires_grad()) {
          float* db = bias.grad_data();
          for (int64_t c = 0; c < cout; ++c) {
            db[c] += simd::reduce_sum(dyb + c * cols, cols);
          }
        }
        if (x.requires_grad()) {
          simd::gemm_tn(w.data(), dyb, dcol.data(), ckk, cout, cols, false);
          col2im_accum(dcol.data(), cin, v.h, v.w, k, stride, ph.before, pw.before,
                       out_h, out_w, x.grad_data() + b * in_bs);
        }
      }
    });
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int64_t stride) {
  const ImageView v = image_view("conv_transpose2d", x);
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
    detail::fail_shape("conv_transpose2d",
                       "weight must be [Cin,Cout,K,K], got " + shape_str(w.shape()));
  }
  const int64_t cin = w.dim(0);
  const int64_t cout = w.dim(1);
  const int64_t k = w.dim(2);
  if (k != stride) {
    detail::fail_shape("conv_transpose2d",
                       "kernel must equal stride (non-overlapping), got k=" +
                           std::to_string(k) + " stride=" + std::to_string(stride));
  }
  if (cin != v.channels) {
    detail::fail_shape("conv_transpose2d", "input has " + std::to_string(v.channels) +
                                               " channels, weight expects " +
                                               std::to_string(cin));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    detail::fail_shape("conv_transpose2d", "bias must be [" + std::to_string(cout) + "]");
  }

  const int64_t out_h = v.h * k;
  const int64_t out_w = v.w * k;
  const int64_t hw = v.h * v.w;
  const int64_t ckk = cout * k * k;
  Tensor out = Tensor::zeros(image_shape(v, cout, out_h, out_w));

  // M[coutkk, hw] = W^T[coutkk, cin] * X[cin, hw], then each column of M is
  // a KxK tile scattered at stride K (tiles never overlap).
  std::vector<float> m(static_cast<size_t>(ckk * hw));
  const int64_t in_bs = v.channels * hw;
  const int64_t out_bs = cout * out_h * out_w;
  for (int64_t b = 0; b < v.batch; ++b) {
    simd::gemm_tn(w.data(), x.data() + b * in_bs, m.data(), ckk, cin, hw, false);
    float* ob = out.data() + b * out_bs;
    const float* bv = bias.defined() ? bias.data() : nullptr;
    for (int64_t c = 0; c < cout; ++c) {
      const float bias_c = bv ? bv[c] : 0.0f;
      for (int64_t ky = 0; ky < k; ++ky) {
        for (int64_t kx = 0; kx < k; ++kx) {
          const float* row = m.data() + ((c * k + ky) * k + kx) * hw;
          for (int64_t y = 0; y < v.h; ++y) {
            float* dst = ob + c * out_h * out_w + (y * k + ky) * out_w + kx;
            const float* src = row + y * v.w;
            for (int64_t xw = 0; xw < v.w; ++xw) dst[xw * k] = src[xw] + bias_c;
          }
        }
      }
    }
  }
  detail::check_finite(out, "conv_transpose2d");

  if (detail::want_grad({&x, &w, &bias})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, w, bias, out, v, cin, cout, k, hw, ckk, in_bs, out_bs,
                                out_h, out_w]() mutable {
      std::vector<float> dm(static_cast<size_t>(ckk * hw));
      const float* dy = out.grad_data();
      for (int64_t b = 0; b < v.batch; ++b) {
        const float* dyb = dy + b * out_bs;
        // Gather the scattered tiles back into dM.
        for (int64_t c = 0; c < cout; ++c) {
          for (int64_t ky = 0; ky < k; ++ky) {
            for (int64_t kx = 0; kx < k; ++kx) {
              float* row = dm.data() + ((c * k + ky) * k + kx) * hw;
              for (int64_t y = 0; y < v.h; ++y) {
                const float* src = dyb + c * out_h * out_w + (y * k + ky) * out_w + kx;
                float* dst = row + y * v.w;
                for (int64_t xw = 0; xw < v.w; ++xw) dst[xw] = src[xw * k];
              }
            }
          }
        }
        if (x.requires_grad()) {
          // dX = W * dM
          simd::gemm_nn(w.data(), dm.data(), x.grad_data() + b * in_bs, cin, ckk, hw,
                        true);
        }
        if (w.requires_grad()) {
          // dW = X * dM^T
          simd::gemm_nt(x.data() + b * in_bs, dm.data(), w.grad_data(), cin, hw, ckk,
                        true);
        }
        if (bias.defined() && bias.requires_grad()) {
          float* db = bias.grad_data();
          for (int64_t c = 0; c < cout; ++c) {
            db[c] += simd::reduce_sum(dyb + c * out_h * out_w, out_h * out_w);
          }
        }
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& x, int64_t k, int64_t stride, bool same_padding) {
  const ImageView v = image_view("maxpool2d", x);
  if (k <= 0 || stride <= 0) detail::fail_shape("maxpool2d", "k and stride must be positive");
  PadSpec ph{0, 0};
  PadSpec pw{0, 0};
  if (same_padding) {
    ph = same_pad(v.h, k, stride);
    pw = same_pad(v.w, k, stride);
  } else {
    if (v.h < k || v.w < k) detail::fail_shape("maxpool2d", "input smaller than window");
    ph = {(v.h - k) / stride + 1, 0};
    pw = {(v.w - k) / stride + 1, 0};
  }
  const int64_t out_h = ph.out;
  const int64_t out_w = pw.out;
  Tensor out = Tensor::zeros(image_shape(v, v.channels, out_h, out_w));

  // Flat input index of each window maximum, kept for the backward pass.
  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(v.batch * v.channels * out_h * out_w));
  const int64_t in_bs = v.channels * v.h * v.w;
  float* ov = out.data();
  int64_t oi = 0;
  for (int64_t b = 0; b < v.batch; ++b) {
    for (int64_t c = 0; c < v.channels; ++c) {
      const float* xc = x.data() + b * in_bs + c * v.h * v.w;
      for (int64_t oy = 0; oy < out_h; ++oy) {
        for (int64_t ox = 0; ox < out_w; ++ox, ++oi) {
          float best = -std::numeric_limits<float>::infinity();
          int64_t best_idx = -1;
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = oy * stride + ky - ph.before;
            if (iy < 0 || iy >= v.h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = ox * stride + kx - pw.before;
              if (ix < 0 || ix >= v.w) continue;
              const float val = xc[iy * v.w + ix];
              if (val > best) {
                best = val;
                best_idx = b * in_bs + c * v.h * v.w + iy * v.w + ix;
              }
            }
          }
          if (best_idx < 0) {
            detail::fail_shape("maxpool2d", "window contains no valid elements");
          }
          ov[oi] = best;
          (*argmax)[static_cast<size_t>(oi)] = best_idx;
        }
      }
    }
  }
  detail::check_finite(out, "maxpool2d");

  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, argmax]() mutable {
      const float* dy = out.grad_data();
      float* dx = x.grad_data();
      for (int64_t i = 0; i < out.numel(); ++i) {
        dx[(*argmax)[static_cast<size_t>(i)]] += dy[i];
      }
    });
  }
  return out;
}

Tensor resize(const Tensor& x, int64_t num, int64_t den, ResizeMode mode) {
  const ImageView v = image_view("resize", x);
  if (num <= 0 || den <= 0) detail::fail_shape("resize", "factor must be positive");
  if ((v.h * num) % den != 0 || (v.w * num) % den != 0) {
    detail::fail_shape("resize", "factor " + std::to_string(num) + "/" +
                                     std::to_string(den) + " does not divide " +
                                     std::to_string(v.h) + "x" + std::to_string(v.w));
  }
  return resize_to(x, v.h * num / den, v.w * num / den, mode);
}

Tensor resize_to(const Tensor& x, int64_t out_h, int64_t out_w, ResizeMode mode) {
  const ImageView v = image_view("resize_to", x);
  if (out_h <= 0 || out_w <= 0) detail::fail_shape("resize_to", "output dims must be positive");
  Tensor out = Tensor::zeros(image_shape(v, v.channels, out_h, out_w));
  const int64_t planes = v.batch * v.channels;
  const int64_t in_plane = v.h * v.w;
  const int64_t out_plane = out_h * out_w;

  if (mode == ResizeMode::kNearest) {
    std::vector<int64_t> sy(static_cast<size_t>(out_h)), sx(static_cast<size_t>(out_w));
    for (int64_t y = 0; y < out_h; ++y) sy[static_cast<size_t>(y)] = nearest_src(y, v.h, out_h);
    for (int64_t xw = 0; xw < out_w; ++xw) sx[static_cast<size_t>(xw)] = nearest_src(xw, v.w, out_w);
    for (int64_t p = 0; p < planes; ++p) {
      const float* in = x.data() + p * in_plane;
      float* ov = out.data() + p * out_plane;
      for (int64_t y = 0; y < out_h; ++y) {
        const float* row = in + sy[static_cast<size_t>(y)] * v.w;
        for (int64_t xw = 0; xw < out_w; ++xw) {
          ov[y * out_w + xw] = row[sx[static_cast<size_t>(xw)]];
        }
      }
    }
    if (detail::want_grad({&x})) {
      out.set_requires_grad(true);
      GradTape::active()->record([x, out, sy, sx, planes, in_plane, out_plane, out_h,
                                  out_w, v]() mutable {
        const float* dy = out.grad_data();
        float* dx = x.grad_data();
        for (int64_t p = 0; p < planes; ++p) {
          for (int64_t y = 0; y < out_h; ++y) {
            for (int64_t xw = 0; xw < out_w; ++xw) {
              dx[p * in_plane + sy[static_cast<size_t>(y)] * v.w +
                 sx[static_cast<size_t>(xw)]] += dy[p * out_plane + y * out_w + xw];
            }
          }
        }
      });
    }
    detail::check_finite(out, "resize_to");
    return out;
  }

  // Bilinear.
  std::vector<BilinearTap> ty(static_cast<size_t>(out_h)), tx(static_cast<size_t>(out_w));
  for (int64_t y = 0; y < out_h; ++y) ty[static_cast<size_t>(y)] = bilinear_tap(y, v.h, out_h);
  for (int64_t xw = 0; xw < out_w; ++xw) tx[static_cast<size_t>(xw)] = bilinear_tap(xw, v.w, out_w);
  for (int64_t p = 0; p < planes; ++p) {
    const float* in = x.data() + p * in_plane;
    float* ov = out.data() + p * out_plane;
    for (int64_t y = 0; y < out_h; ++y) {
      const BilinearTap& a = ty[static_cast<size_t>(y)];
      for (int64_t xw = 0; xw < out_w; ++xw) {
        const BilinearTap& b = tx[static_cast<size_t>(xw)];
        const float v00 = in[a.lo * v.w + b.lo];
        const float v01 = in[a.lo * v.w + b.hi];
        const float v10 = in[a.hi * v.w + b.lo];
        const float v11 = in[a.hi * v.w + b.hi];
        const float top = v00 + (v01 - v00) * b.frac;
        const float bot = v10 + (v11 - v10) * b.frac;
        ov[y * out_w + xw] = top + (bot - top) * a.frac;
      }
    }
  }
  detail::check_finite(out, "resize_to");
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, ty, tx, planes, in_plane, out_plane, out_h,
                                out_w, v]() mutable {
      const float* dy = out.grad_data();
      float* dx = x.grad_data();
      for (int64_t p = 0; p < planes; ++p) {
        float* dxp = dx + p * in_plane;
        const float* dyp = dy + p * out_plane;
        for (int64_t y = 0; y < out_h; ++y) {
          const BilinearTap& a = ty[static_cast<size_t>(y)];
          for (int64_t xw = 0; xw < out_w; ++xw) {
            const BilinearTap& b = tx[static_cast<size_t>(xw)];
            const float g = dyp[y * out_w + xw];
            dxp[a.lo * v.w + b.lo] += g * (1.0f - a.frac) * (1.0f - b.frac);
            dxp[a.lo * v.w + b.hi] += g * (1.0f - a.frac) * b.frac;
            dxp[a.hi * v.w + b.lo] += g * a.frac * (1.0f - b.frac);
            dxp[a.hi * v.w + b.hi] += g * a.frac * b.frac;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace qtseg::ops
