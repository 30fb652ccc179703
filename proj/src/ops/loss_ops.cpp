#include <cmath>

#include "qtseg/ops.hpp"

namespace qtseg::ops {
namespace {

inline float sigmoid_scalar(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
  if (!same_shape(logits.shape(), targets.shape())) {
    detail::fail_shape("bce_with_logits_mean",
                       "shape mismatch " + shape_str(logits.shape()) + " vs " +
                           shape_str(targets.shape()));
  }
  const int64_t n = logits.numel();
  const float* xv = logits.data();
  const float* yv = targets.data();
  // Stable form: max(x,0) - x*y + log1p(exp(-|x|)).
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const float x = xv[i];
    acc += std::max(x, 0.0f) - x * yv[i] + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor out = Tensor::from_data({1}, {static_cast<float>(acc / static_cast<double>(n))});
  detail::check_finite(out, "bce_with_logits_mean");
  if (detail::want_grad({&logits})) {
    out.set_requires_grad(true);
    GradTape::active()->record([logits, targets, out, n]() mutable {
      const float g = out.grad_data()[0] / static_cast<float>(n);
      const float* xv2 = logits.data();
      const float* yv2 = targets.data();
      float* dx = logits.grad_data();
      for (int64_t i = 0; i < n; ++i) {
        dx[i] += g * (sigmoid_scalar(xv2[i]) - yv2[i]);
      }
    });
  }
  return out;
}

Tensor softmax_ce_mean(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 3 && logits.rank() != 4) {
    detail::fail_shape("softmax_ce_mean", "logits must be [C,H,W] or [B,C,H,W]");
  }
  const int64_t channels = logits.dim(-3);
  const int64_t spatial = logits.dim(-2) * logits.dim(-1);
  const int64_t batch = logits.numel() / (channels * spatial);
  if (targets.numel() != batch * spatial) {
    detail::fail_shape("softmax_ce_mean",
                       "targets " + shape_str(targets.shape()) + " do not match logits " +
                           shape_str(logits.shape()));
  }
  const int64_t bs = channels * spatial;
  const float* xv = logits.data();
  const float* tv = targets.data();
  double acc = 0.0;
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t s = 0; s < spatial; ++s) {
      const int64_t base = b * bs + s;
      const int64_t cls = static_cast<int64_t>(std::lround(tv[b * spatial + s]));
      if (cls < 0 || cls >= channels) {
        throw NumericError("softmax_ce_mean: class index " + std::to_string(cls) +
                           " outside [0," + std::to_string(channels) + ")");
      }
      float mx = xv[base];
      for (int64_t c = 1; c < channels; ++c) {
        mx = std::max(mx, xv[base + c * spatial]);
      }
      double sum = 0.0;
      for (int64_t c = 0; c < channels; ++c) {
        sum += std::exp(static_cast<double>(xv[base + c * spatial] - mx));
      }
      acc += std::log(sum) + mx - xv[base + cls * spatial];
    }
  }
  const int64_t count = batch * spatial;
  Tensor out =
      Tensor::from_data({1}, {static_cast<float>(acc / static_cast<double>(count))});
  detail::check_finite(out, "softmax_ce_mean");
  if (detail::want_grad({&logits})) {
    out.set_requires_grad(true);
    GradTape::active()->record([logits, targets, out, batch, channels, spatial, bs,
                                count]() mutable {
      const float g = out.grad_data()[0] / static_cast<float>(count);
      const float* xv2 = logits.data();
      const float* tv2 = targets.data();
      float* dx = logits.grad_data();
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t s = 0; s < spatial; ++s) {
          const int64_t base = b * bs + s;
          const int64_t cls = static_cast<int64_t>(std::lround(tv2[b * spatial + s]));
          float mx = xv2[base];
          for (int64_t c = 1; c < channels; ++c) {
            mx = std::max(mx, xv2[base + c * spatial]);
          }
          float sum = 0.0f;
          for (int64_t c = 0; c < channels; ++c) {
            sum += std::exp(xv2[base + c * spatial] - mx);
          }
          const float inv = 1.0f / sum;
          for (int64_t c = 0; c < channels; ++c) {
            const float p = std::exp(xv2[base + c * spatial] - mx) * inv;
            dx[base + c * spatial] += g * (p - (c == cls ? 1.0f : 0.0f));
          }
        }
      }
    });
  }
  return out;
}

}  // namespace qtseg::ops
