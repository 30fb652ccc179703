#include <cmath>
#include <memory>

#include "qtseg/ops.hpp"
#include "qtseg/simd/kernels.hpp"

namespace qtseg::ops {
namespace {

// Copies head `h` of a [T,D] sequence into a dense [T,dh] scratch matrix,
// optionally scaling on the way.
void gather_head(const float* base, int64_t t, int64_t d, int64_t off, int64_t dh,
                 float* dst, float mult = 1.0f) {
  for (int64_t r = 0; r < t; ++r) {
    const float* src = base + r * d + off;
    float* out = dst + r * dh;
    for (int64_t c = 0; c < dh; ++c) out[c] = src[c] * mult;
  }
}

void scatter_head(const float* src, float* base, int64_t t, int64_t d, int64_t off,
                  int64_t dh) {
  for (int64_t r = 0; r < t; ++r) {
    const float* in = src + r * dh;
    float* out = base + r * d + off;
    for (int64_t c = 0; c < dh; ++c) out[c] = in[c];
  }
}

void scatter_head_accum(const float* src, float* base, int64_t t, int64_t d,
                        int64_t off, int64_t dh, float mult = 1.0f) {
  for (int64_t r = 0; r < t; ++r) {
    const float* in = src + r * dh;
    float* out = base + r * d + off;
    for (int64_t c = 0; c < dh; ++c) out[c] += in[c] * mult;
  }
}

void softmax_rows_inplace(float* x, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    float* row = x + r * cols;
    const float mx = simd::reduce_max(row, cols);
    float sum = 0.0f;
    for (int64_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    const float inv = 1.0f / sum;
    simd::scale(row, inv, row, cols);
  }
}

// dx = p * (dp - sum(dp*p))  rowwise, accumulated into dst.
void softmax_rows_backward(const float* p, const float* dp, float* dst, int64_t rows,
                           int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const float* pr = p + r * cols;
    const float* dr = dp + r * cols;
    float* er = dst + r * cols;
    float dot = 0.0f;
    for (int64_t c = 0; c < cols; ++c) dot += pr[c] * dr[c];
    for (int64_t c = 0; c < cols; ++c) er[c] = pr[c] * (dr[c] - dot);
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool a_batched = a.rank() == 3;
  const bool b_batched = b.rank() == 3;
  if ((a.rank() != 2 && a.rank() != 3) || (b.rank() != 2 && b.rank() != 3) ||
      (b_batched && !a_batched)) {
    detail::fail_shape("matmul", "unsupported ranks " + shape_str(a.shape()) + " x " +
                                     shape_str(b.shape()));
  }
  const int64_t batch = a_batched ? a.dim(0) : 1;
  const int64_t m = a.dim(-2);
  const int64_t k = a.dim(-1);
  const int64_t p = b.dim(-1);
  if (b.dim(-2) != k || (b_batched && b.dim(0) != batch)) {
    detail::fail_shape("matmul", "inner dims disagree: " + shape_str(a.shape()) + " x " +
                                     shape_str(b.shape()));
  }
  Shape out_shape = a_batched ? Shape{batch, m, p} : Shape{m, p};
  Tensor out = Tensor::zeros(std::move(out_shape));
  const int64_t a_bs = m * k;
  const int64_t b_bs = b_batched ? k * p : 0;
  const int64_t o_bs = m * p;
  for (int64_t i = 0; i < batch; ++i) {
    simd::gemm_nn(a.data() + i * a_bs, b.data() + i * b_bs, out.data() + i * o_bs, m, k,
                  p, false);
  }
  detail::check_finite(out, "matmul");
  if (detail::want_grad({&a, &b})) {
    out.set_requires_grad(true);
    GradTape::active()->record([a, b, out, batch, m, k, p, a_bs, b_bs, o_bs]() mutable {
      const float* dy = out.grad_data();
      for (int64_t i = 0; i < batch; ++i) {
        if (a.requires_grad()) {
          // dA = dC * B^T
          simd::gemm_nt(dy + i * o_bs, b.data() + i * b_bs, a.grad_data() + i * a_bs, m,
                        p, k, true);
        }
        if (b.requires_grad()) {
          // dB = A^T * dC (accumulates across the batch when B is shared)
          simd::gemm_tn(a.data() + i * a_bs, dy + i * o_bs, b.grad_data() + i * b_bs, k,
                        m, p, true);
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) {
    detail::fail_shape("linear", "weight must be [Din,Dout], got " + shape_str(w.shape()));
  }
  const int64_t din = w.dim(0);
  const int64_t dout = w.dim(1);
  if (x.rank() < 1 || x.dim(-1) != din) {
    detail::fail_shape("linear", "input " + shape_str(x.shape()) + " incompatible with " +
                                     shape_str(w.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != dout)) {
    detail::fail_shape("linear", "bias must be [" + std::to_string(dout) + "]");
  }
  const int64_t rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor out = Tensor::zeros(std::move(out_shape));
  simd::gemm_nn(x.data(), w.data(), out.data(), rows, din, dout, false);
  if (b.defined()) {
    float* ov = out.data();
    const float* bv = b.data();
    for (int64_t r = 0; r < rows; ++r) simd::add(ov + r * dout, bv, ov + r * dout, dout);
  }
  detail::check_finite(out, "linear");
  if (detail::want_grad({&x, &w, &b})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, w, b, out, rows, din, dout]() mutable {
      const float* dy = out.grad_data();
      if (x.requires_grad()) {
        simd::gemm_nt(dy, w.data(), x.grad_data(), rows, dout, din, true);
      }
      if (w.requires_grad()) {
        simd::gemm_tn(x.data(), dy, w.grad_data(), din, rows, dout, true);
      }
      if (b.defined() && b.requires_grad()) {
        float* db = b.grad_data();
        for (int64_t r = 0; r < rows; ++r) simd::axpy(1.0f, dy + r * dout, db, dout);
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() < 1) detail::fail_shape("softmax_rows", "needs rank >= 1");
  const int64_t cols = x.dim(-1);
  const int64_t rows = x.numel() / cols;
  Tensor out = Tensor::from_data(x.shape(),
                                 std::vector<float>(x.values().begin(), x.values().end()));
  softmax_rows_inplace(out.data(), rows, cols);
  detail::check_finite(out, "softmax_rows");
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, rows, cols]() mutable {
      const float* p = out.data();
      const float* dp = out.grad_data();
      float* dx = x.grad_data();
      for (int64_t r = 0; r < rows; ++r) {
        const float* pr = p + r * cols;
        const float* dr = dp + r * cols;
        float* er = dx + r * cols;
        float dot = 0.0f;
        for (int64_t c = 0; c < cols; ++c) dot += pr[c] * dr[c];
        for (int64_t c = 0; c < cols; ++c) er[c] += pr[c] * (dr[c] - dot);
      }
    });
  }
  return out;
}

Tensor softmax_channels(const Tensor& x) {
  if (x.rank() != 3 && x.rank() != 4) {
    detail::fail_shape("softmax_channels", "expected [C,H,W] or [B,C,H,W]");
  }
  const int64_t channels = x.dim(-3);
  const int64_t spatial = x.dim(-2) * x.dim(-1);
  const int64_t batch = x.numel() / (channels * spatial);
  Tensor out = Tensor::zeros(x.shape());
  const float* xv = x.data();
  float* ov = out.data();
  const int64_t bs = channels * spatial;
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t s = 0; s < spatial; ++s) {
      const float* col = xv + b * bs + s;
      float* oc = ov + b * bs + s;
      float mx = col[0];
      for (int64_t c = 1; c < channels; ++c) mx = std::max(mx, col[c * spatial]);
      float sum = 0.0f;
      for (int64_t c = 0; c < channels; ++c) {
        const float e = std::exp(col[c * spatial] - mx);
        oc[c * spatial] = e;
        sum += e;
      }
      const float inv = 1.0f / sum;
      for (int64_t c = 0; c < channels; ++c) oc[c * spatial] *= inv;
    }
  }
  detail::check_finite(out, "softmax_channels");
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, batch, channels, spatial, bs]() mutable {
      const float* p = out.data();
      const float* dp = out.grad_data();
      float* dx = x.grad_data();
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t s = 0; s < spatial; ++s) {
          const int64_t base = b * bs + s;
          float dot = 0.0f;
          for (int64_t c = 0; c < channels; ++c) {
            dot += p[base + c * spatial] * dp[base + c * spatial];
          }
          for (int64_t c = 0; c < channels; ++c) {
            const int64_t i = base + c * spatial;
            dx[i] += p[i] * (dp[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           int64_t heads, Tensor* probs_out) {
  if (q.rank() != k.rank() || q.rank() != v.rank() || (q.rank() != 2 && q.rank() != 3)) {
    detail::fail_shape("multihead_attention", "q/k/v must all be [T,D] or [B,T,D]");
  }
  const int64_t d = q.dim(-1);
  if (k.dim(-1) != d || v.dim(-1) != d) {
    detail::fail_shape("multihead_attention", "q/k/v feature dims differ");
  }
  if (heads <= 0 || d % heads != 0) {
    detail::fail_shape("multihead_attention", "feature dim " + std::to_string(d) +
                                                  " not divisible by " +
                                                  std::to_string(heads) + " heads");
  }
  const int64_t tq = q.dim(-2);
  const int64_t tk = k.dim(-2);
  if (v.dim(-2) != tk) detail::fail_shape("multihead_attention", "k/v token counts differ");
  const int64_t batch = q.rank() == 3 ? q.dim(0) : 1;
  if (q.rank() == 3 && (k.dim(0) != batch || v.dim(0) != batch)) {
    detail::fail_shape("multihead_attention", "batch dims differ");
  }

  const int64_t dh = d / heads;
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));
  Tensor out = Tensor::zeros(q.shape());

  // Attention probabilities are kept for the backward pass (and optionally
  // for callers that want to inspect them).
  auto probs = std::make_shared<std::vector<float>>(
      static_cast<size_t>(batch * heads * tq * tk));

  std::vector<float> qbuf(static_cast<size_t>(tq * dh));
  std::vector<float> kbuf(static_cast<size_t>(tk * dh));
  std::vector<float> vbuf(static_cast<size_t>(tk * dh));
  std::vector<float> obuf(static_cast<size_t>(tq * dh));

  const int64_t q_bs = tq * d;
  const int64_t kv_bs = tk * d;
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t h = 0; h < heads; ++h) {
      const int64_t off = h * dh;
      gather_head(q.data() + b * q_bs, tq, d, off, dh, qbuf.data(), att_scale);
      gather_head(k.data() + b * kv_bs, tk, d, off, dh, kbuf.data());
      gather_head(v.data() + b * kv_bs, tk, d, off, dh, vbuf.data());
      float* pmat = probs->data() + (b * heads + h) * tq * tk;
      simd::gemm_nt(qbuf.data(), kbuf.data(), pmat, tq, dh, tk, false);
      softmax_rows_inplace(pmat, tq, tk);
      simd::gemm_nn(pmat, vbuf.data(), obuf.data(), tq, tk, dh, false);
      scatter_head(obuf.data(), out.data() + b * q_bs, tq, d, off, dh);
    }
  }
  detail::check_finite(out, "multihead_attention");

  if (probs_out) {
    *probs_out = Tensor::from_data({batch * heads * tq, tk}, *probs);
  }

  if (detail::want_grad({&q, &k, &v})) {
    out.set_requires_grad(true);
    GradTape::active()->record([q, k, v, out, probs, batch, heads, tq, tk, d, dh,
                                att_scale, q_bs, kv_bs]() mutable {
      std::vector<float> qbuf2(static_cast<size_t>(tq * dh));
      std::vector<float> kbuf2(static_cast<size_t>(tk * dh));
      std::vector<float> vbuf2(static_cast<size_t>(tk * dh));
      std::vector<float> dobuf(static_cast<size_t>(tq * dh));
      std::vector<float> dpbuf(static_cast<size_t>(tq * tk));
      std::vector<float> dsbuf(static_cast<size_t>(tq * tk));
      std::vector<float> dhead(static_cast<size_t>(std::max(tq, tk) * dh));
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
          const int64_t off = h * dh;
          const float* pmat = probs->data() + (b * heads + h) * tq * tk;
          gather_head(out.grad_data() + b * q_bs, tq, d, off, dh, dobuf.data());
          gather_head(k.data() + b * kv_bs, tk, d, off, dh, kbuf2.data());
          gather_head(v.data() + b * kv_bs, tk, d, off, dh, vbuf2.data());
          // dP = dO * V^T, then through the softmax.
          simd::gemm_nt(dobuf.data(), vbuf2.data(), dpbuf.data(), tq, dh, tk, false);
          softmax_rows_backward(pmat, dpbuf.data(), dsbuf.data(), tq, tk);
          if (q.requires_grad()) {
            // dQ = scale * dS * K
            simd::gemm_nn(dsbuf.data(), kbuf2.data(), dhead.data(), tq, tk, dh, false);
            scatter_head_accum(dhead.data(), q.grad_data() + b * q_bs, tq, d, off, dh,
                               att_scale);
          }
          if (k.requires_grad()) {
            // dK = dS^T * (scale * Q)
            gather_head(q.data() + b * q_bs, tq, d, off, dh, qbuf2.data(), att_scale);
            simd::gemm_tn(dsbuf.data(), qbuf2.data(), dhead.data(), tk, tq, dh, false);
            scatter_head_accum(dhead.data(), k.grad_data() + b * kv_bs, tk, d, off, dh);
          }
          if (v.requires_grad()) {
            // dV = P^T * dO
            simd::gemm_tn(pmat, dobuf.data(), dhead.data(), tk, tq, dh, false);
            scatter_head_accum(dhead.data(), v.grad_data() + b * kv_bs, tk, d, off, dh);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace qtseg::ops
