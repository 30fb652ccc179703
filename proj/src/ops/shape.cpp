#include <cstring>

#include "qtseg/ops.hpp"
#include "qtseg/simd/kernels.hpp"

namespace qtseg::ops {
namespace {

// Channel axis bookkeeping for [C,H,W] / [B,C,H,W] tensors.
struct ImageDims {
  int64_t batch;
  int64_t channels;
  int64_t spatial;  // H*W
};

ImageDims image_dims(const char* op, const Tensor& x) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1) * x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  detail::fail_shape(op, "expected rank 3 or 4, got " + shape_str(x.shape()));
}

void transpose_mat(const float* in, float* out, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
  }
}

void transpose_mat_accum(const float* in, float* out, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) out[c * rows + r] += in[r * cols + c];
  }
}

}  // namespace

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    detail::fail_shape("reshape", shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                                      " changes element count");
  }
  Tensor out = Tensor::from_data(std::move(new_shape),
                                 std::vector<float>(x.values().begin(), x.values().end()));
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out]() mutable {
      simd::axpy(1.0f, out.grad_data(), x.grad_data(), x.numel());
    });
  }
  return out;
}

Tensor matrix_transpose(const Tensor& x) {
  if (x.rank() < 2) {
    detail::fail_shape("matrix_transpose", "needs rank >= 2, got " + shape_str(x.shape()));
  }
  const int64_t rows = x.dim(-2);
  const int64_t cols = x.dim(-1);
  const int64_t batch = x.numel() / (rows * cols);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::zeros(std::move(out_shape));
  for (int64_t b = 0; b < batch; ++b) {
    transpose_mat(x.data() + b * rows * cols, out.data() + b * rows * cols, rows, cols);
  }
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, batch, rows, cols]() mutable {
      float* dx = x.grad_data();
      const float* dy = out.grad_data();
      for (int64_t b = 0; b < batch; ++b) {
        // d(out) is [cols,rows]; transposing it back accumulates into dx.
        transpose_mat_accum(dy + b * rows * cols, dx + b * rows * cols, cols, rows);
      }
    });
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) detail::fail_shape("concat_channels", "no inputs");
  const ImageDims d0 = image_dims("concat_channels", xs[0]);
  int64_t total_c = 0;
  for (const Tensor& x : xs) {
    const ImageDims d = image_dims("concat_channels", x);
    if (x.rank() != xs[0].rank() || d.batch != d0.batch || d.spatial != d0.spatial ||
        x.dim(-1) != xs[0].dim(-1)) {
      detail::fail_shape("concat_channels",
                         "non-channel dims differ: " + shape_str(xs[0].shape()) + " vs " +
                             shape_str(x.shape()));
    }
    total_c += d.channels;
  }
  Shape out_shape = xs[0].shape();
  out_shape[out_shape.size() - 3] = total_c;
  Tensor out = Tensor::zeros(std::move(out_shape));

  const int64_t out_stride = total_c * d0.spatial;
  for (int64_t b = 0; b < d0.batch; ++b) {
    int64_t c_off = 0;
    for (const Tensor& x : xs) {
      const int64_t cs = x.dim(-3) * d0.spatial;
      std::memcpy(out.data() + b * out_stride + c_off, x.data() + b * cs,
                  sizeof(float) * static_cast<size_t>(cs));
      c_off += cs;
    }
  }

  bool any_grad = false;
  for (const Tensor& x : xs) any_grad = any_grad || x.requires_grad();
  if (recording() && any_grad) {
    out.set_requires_grad(true);
    GradTape::active()->record([xs, out, d0, out_stride]() mutable {
      const float* dy = out.grad_data();
      for (int64_t b = 0; b < d0.batch; ++b) {
        int64_t c_off = 0;
        for (const Tensor& x : xs) {
          const int64_t cs = x.dim(-3) * d0.spatial;
          if (x.requires_grad()) {
            simd::axpy(1.0f, dy + b * out_stride + c_off, x.grad_data() + b * cs, cs);
          }
          c_off += cs;
        }
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int64_t begin, int64_t end) {
  const ImageDims d = image_dims("slice_channels", x);
  if (begin < 0 || end <= begin || end > d.channels) {
    detail::fail_shape("slice_channels",
                       "range [" + std::to_string(begin) + "," + std::to_string(end) +
                           ") invalid for " + std::to_string(d.channels) + " channels");
  }
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 3] = end - begin;
  Tensor out = Tensor::zeros(std::move(out_shape));
  const int64_t in_stride = d.channels * d.spatial;
  const int64_t out_len = (end - begin) * d.spatial;
  for (int64_t b = 0; b < d.batch; ++b) {
    std::memcpy(out.data() + b * out_len, x.data() + b * in_stride + begin * d.spatial,
                sizeof(float) * static_cast<size_t>(out_len));
  }
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, d, begin, in_stride, out_len]() mutable {
      const float* dy = out.grad_data();
      float* dx = x.grad_data();
      for (int64_t b = 0; b < d.batch; ++b) {
        simd::axpy(1.0f, dy + b * out_len, dx + b * in_stride + begin * d.spatial,
                   out_len);
      }
    });
  }
  return out;
}

Tensor expand_batch(const Tensor& x, int64_t batch) {
  if (batch <= 0) detail::fail_shape("expand_batch", "batch must be positive");
  Shape out_shape;
  out_shape.reserve(x.shape().size() + 1);
  out_shape.push_back(batch);
  for (int64_t d : x.shape()) out_shape.push_back(d);
  Tensor out = Tensor::zeros(std::move(out_shape));
  const int64_t n = x.numel();
  for (int64_t b = 0; b < batch; ++b) {
    std::memcpy(out.data() + b * n, x.data(), sizeof(float) * static_cast<size_t>(n));
  }
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, batch, n]() mutable {
      const float* dy = out.grad_data();
      float* dx = x.grad_data();
      for (int64_t b = 0; b < batch; ++b) simd::axpy(1.0f, dy + b * n, dx, n);
    });
  }
  return out;
}

Tensor img2seq(const Tensor& x) {
  const ImageDims d = image_dims("img2seq", x);
  Shape out_shape = x.rank() == 3 ? Shape{d.spatial, d.channels}
                                  : Shape{d.batch, d.spatial, d.channels};
  Tensor out = Tensor::zeros(std::move(out_shape));
  const int64_t bs = d.channels * d.spatial;
  for (int64_t b = 0; b < d.batch; ++b) {
    // [C,HW] -> [HW,C]
    transpose_mat(x.data() + b * bs, out.data() + b * bs, d.channels, d.spatial);
  }
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, d, bs]() mutable {
      for (int64_t b = 0; b < d.batch; ++b) {
        transpose_mat_accum(out.grad_data() + b * bs, x.grad_data() + b * bs, d.spatial,
                            d.channels);
      }
    });
  }
  return out;
}

Tensor seq2img(const Tensor& x, int64_t h, int64_t w) {
  if (x.rank() != 2 && x.rank() != 3) {
    detail::fail_shape("seq2img", "expected [T,C] or [B,T,C], got " + shape_str(x.shape()));
  }
  const int64_t tokens = x.dim(-2);
  const int64_t channels = x.dim(-1);
  const int64_t batch = x.rank() == 3 ? x.dim(0) : 1;
  if (tokens != h * w) {
    detail::fail_shape("seq2img", std::to_string(tokens) + " tokens cannot form " +
                                      std::to_string(h) + "x" + std::to_string(w));
  }
  Shape out_shape =
      x.rank() == 2 ? Shape{channels, h, w} : Shape{batch, channels, h, w};
  Tensor out = Tensor::zeros(std::move(out_shape));
  const int64_t bs = channels * tokens;
  for (int64_t b = 0; b < batch; ++b) {
    // [HW,C] -> [C,HW]
    transpose_mat(x.data() + b * bs, out.data() + b * bs, tokens, channels);
  }
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, batch, bs, tokens, channels]() mutable {
      for (int64_t b = 0; b < batch; ++b) {
        transpose_mat_accum(out.grad_data() + b * bs, x.grad_data() + b * bs, channels,
                            tokens);
      }
    });
  }
  return out;
}

}  // namespace qtseg::ops
