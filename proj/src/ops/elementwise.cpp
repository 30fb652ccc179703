#include <cmath>

#include "qtseg/ops.hpp"
#include "qtseg/simd/kernels.hpp"

namespace qtseg::ops {
namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape(), b.shape())) {
    detail::fail_shape(op, "shape mismatch " + shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
  }
}

inline float sigmoid_scalar(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  simd::add(a.data(), b.data(), out.data(), a.numel());
  detail::check_finite(out, "add");
  if (detail::want_grad({&a, &b})) {
    out.set_requires_grad(true);
    GradTape::active()->record([a, b, out]() mutable {
      const float* dy = out.grad_data();
      const int64_t n = out.numel();
      if (a.requires_grad()) simd::axpy(1.0f, dy, a.grad_data(), n);
      if (b.requires_grad()) simd::axpy(1.0f, dy, b.grad_data(), n);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  simd::sub(a.data(), b.data(), out.data(), a.numel());
  detail::check_finite(out, "sub");
  if (detail::want_grad({&a, &b})) {
    out.set_requires_grad(true);
    GradTape::active()->record([a, b, out]() mutable {
      const float* dy = out.grad_data();
      const int64_t n = out.numel();
      if (a.requires_grad()) simd::axpy(1.0f, dy, a.grad_data(), n);
      if (b.requires_grad()) simd::axpy(-1.0f, dy, b.grad_data(), n);
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  simd::mul(a.data(), b.data(), out.data(), a.numel());
  detail::check_finite(out, "mul");
  if (detail::want_grad({&a, &b})) {
    out.set_requires_grad(true);
    GradTape::active()->record([a, b, out]() mutable {
      const float* dy = out.grad_data();
      const int64_t n = out.numel();
      if (a.requires_grad()) {
        float* da = a.grad_data();
        const float* bv = b.data();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * bv[i];
      }
      if (b.requires_grad()) {
        float* db = b.grad_data();
        const float* av = a.data();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i] * av[i];
      }
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  Tensor out = Tensor::zeros(a.shape());
  {
    const float* av = a.data();
    const float* bv = b.data();
    float* ov = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] / bv[i];
  }
  detail::check_finite(out, "div");
  if (detail::want_grad({&a, &b})) {
    out.set_requires_grad(true);
    GradTape::active()->record([a, b, out]() mutable {
      const float* dy = out.grad_data();
      const float* av = a.data();
      const float* bv = b.data();
      const int64_t n = out.numel();
      if (a.requires_grad()) {
        float* da = a.grad_data();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i] / bv[i];
      }
      if (b.requires_grad()) {
        float* db = b.grad_data();
        for (int64_t i = 0; i < n; ++i) db[i] -= dy[i] * av[i] / (bv[i] * bv[i]);
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float s) {
  Tensor out = Tensor::zeros(x.shape());
  simd::scale(x.data(), s, out.data(), x.numel());
  detail::check_finite(out, "scale");
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, s]() mutable {
      simd::axpy(s, out.grad_data(), x.grad_data(), x.numel());
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& x, float c) {
  Tensor out = Tensor::zeros(x.shape());
  {
    const float* xv = x.data();
    float* ov = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) ov[i] = xv[i] + c;
  }
  detail::check_finite(out, "add_scalar");
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out]() mutable {
      simd::axpy(1.0f, out.grad_data(), x.grad_data(), x.numel());
    });
  }
  return out;
}

Tensor activation(const Tensor& x, Act kind) {
  Tensor out = Tensor::zeros(x.shape());
  const float* xv = x.data();
  float* ov = out.data();
  const int64_t n = x.numel();
  switch (kind) {
    case Act::kSilu:
      for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] * sigmoid_scalar(xv[i]);
      break;
    case Act::kGelu:
      // Exact erf form: x * Phi(x).
      for (int64_t i = 0; i < n; ++i) {
        ov[i] = xv[i] * 0.5f * (1.0f + std::erf(xv[i] * kInvSqrt2));
      }
      break;
    case Act::kRelu:
      simd::relu(xv, ov, n);
      break;
  }
  detail::check_finite(out, "activation");
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, kind]() mutable {
      const float* dy = out.grad_data();
      const float* xv2 = x.data();
      float* dx = x.grad_data();
      const int64_t n2 = x.numel();
      switch (kind) {
        case Act::kSilu:
          for (int64_t i = 0; i < n2; ++i) {
            const float s = sigmoid_scalar(xv2[i]);
            dx[i] += dy[i] * s * (1.0f + xv2[i] * (1.0f - s));
          }
          break;
        case Act::kGelu:
          for (int64_t i = 0; i < n2; ++i) {
            const float phi = 0.5f * (1.0f + std::erf(xv2[i] * kInvSqrt2));
            const float pdf = kInvSqrt2Pi * std::exp(-0.5f * xv2[i] * xv2[i]);
            dx[i] += dy[i] * (phi + xv2[i] * pdf);
          }
          break;
        case Act::kRelu:
          simd::relu_backward(xv2, dy, dx, n2);
          break;
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  {
    const float* xv = x.data();
    float* ov = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) ov[i] = sigmoid_scalar(xv[i]);
  }
  detail::check_finite(out, "sigmoid");
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out]() mutable {
      const float* dy = out.grad_data();
      const float* yv = out.data();
      float* dx = x.grad_data();
      for (int64_t i = 0; i < x.numel(); ++i) dx[i] += dy[i] * yv[i] * (1.0f - yv[i]);
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::from_data({1}, {simd::reduce_sum(x.data(), x.numel())});
  detail::check_finite(out, "sum");
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out]() mutable {
      const float dy = out.grad_data()[0];
      float* dx = x.grad_data();
      for (int64_t i = 0; i < x.numel(); ++i) dx[i] += dy;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const float inv_n = 1.0f / static_cast<float>(x.numel());
  Tensor out = Tensor::from_data({1}, {simd::reduce_sum(x.data(), x.numel()) * inv_n});
  detail::check_finite(out, "mean");
  if (detail::want_grad({&x})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, out, inv_n]() mutable {
      const float dy = out.grad_data()[0] * inv_n;
      float* dx = x.grad_data();
      for (int64_t i = 0; i < x.numel(); ++i) dx[i] += dy;
    });
  }
  return out;
}

}  // namespace qtseg::ops
