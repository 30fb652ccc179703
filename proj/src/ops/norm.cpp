#include <cmath>
#include <memory>

#include "qtseg/ops.hpp"
#include "qtseg/simd/kernels.hpp"

namespace qtseg::ops {
namespace {

struct NormDims {
  int64_t batch;
  int64_t channels;
  int64_t spatial;
};

NormDims norm_dims(const char* op, const Tensor& x) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1) * x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  detail::fail_shape(op, "expected [C,H,W] or [B,C,H,W], got " + shape_str(x.shape()));
}

void require_vec(const char* op, const Tensor& t, int64_t len, const char* what) {
  if (t.rank() != 1 || t.dim(0) != len) {
    detail::fail_shape(op, std::string(what) + " must be [" + std::to_string(len) +
                               "], got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, float momentum,
                  float eps) {
  const NormDims d = norm_dims("batch_norm", x);
  require_vec("batch_norm", gamma, d.channels, "gamma");
  require_vec("batch_norm", beta, d.channels, "beta");
  require_vec("batch_norm", running_mean, d.channels, "running_mean");
  require_vec("batch_norm", running_var, d.channels, "running_var");

  const bool use_batch_stats = training_mode();
  const int64_t m = d.batch * d.spatial;
  const int64_t bs = d.channels * d.spatial;

  auto mean = std::make_shared<std::vector<float>>(static_cast<size_t>(d.channels));
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(d.channels));

  if (use_batch_stats) {
    float* rm = running_mean.data();
    float* rv = running_var.data();
    for (int64_t c = 0; c < d.channels; ++c) {
      float sum = 0.0f;
      for (int64_t b = 0; b < d.batch; ++b) {
        sum += simd::reduce_sum(x.data() + b * bs + c * d.spatial, d.spatial);
      }
      const float mu = sum / static_cast<float>(m);
      float sq = 0.0f;
      for (int64_t b = 0; b < d.batch; ++b) {
        sq += simd::reduce_sqdev(x.data() + b * bs + c * d.spatial, mu, d.spatial);
      }
      // Biased variance, both for normalization and the running buffer.
      const float var = sq / static_cast<float>(m);
      (*mean)[static_cast<size_t>(c)] = mu;
      (*inv_std)[static_cast<size_t>(c)] = 1.0f / std::sqrt(var + eps);
      rm[c] = (1.0f - momentum) * rm[c] + momentum * mu;
      rv[c] = (1.0f - momentum) * rv[c] + momentum * var;
    }
  } else {
    const float* rm = running_mean.data();
    const float* rv = running_var.data();
    for (int64_t c = 0; c < d.channels; ++c) {
      (*mean)[static_cast<size_t>(c)] = rm[c];
      (*inv_std)[static_cast<size_t>(c)] = 1.0f / std::sqrt(rv[c] + eps);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t c = 0; c < d.channels; ++c) {
      simd::normalize_affine(x.data() + b * bs + c * d.spatial,
                             (*mean)[static_cast<size_t>(c)],
                             (*inv_std)[static_cast<size_t>(c)], gamma.data()[c],
                             beta.data()[c], out.data() + b * bs + c * d.spatial,
                             d.spatial);
    }
  }
  detail::check_finite(out, "batch_norm");

  if (detail::want_grad({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    GradTape::active()->record(
        [x, gamma, beta, out, d, m, bs, mean, inv_std, use_batch_stats]() mutable {
          const float* dy = out.grad_data();
          const float* xv = x.data();
          for (int64_t c = 0; c < d.channels; ++c) {
            const float mu = (*mean)[static_cast<size_t>(c)];
            const float istd = (*inv_std)[static_cast<size_t>(c)];
            float sum_dy = 0.0f;
            float sum_dy_xhat = 0.0f;
            for (int64_t b = 0; b < d.batch; ++b) {
              const int64_t base = b * bs + c * d.spatial;
              for (int64_t s = 0; s < d.spatial; ++s) {
                const float g = dy[base + s];
                sum_dy += g;
                sum_dy_xhat += g * (xv[base + s] - mu) * istd;
              }
            }
            if (gamma.requires_grad()) gamma.grad_data()[c] += sum_dy_xhat;
            if (beta.requires_grad()) beta.grad_data()[c] += sum_dy;
            if (!x.requires_grad()) continue;
            float* dx = x.grad_data();
            const float gc = gamma.data()[c];
            if (use_batch_stats) {
              const float scale_ = gc * istd / static_cast<float>(m);
              for (int64_t b = 0; b < d.batch; ++b) {
                const int64_t base = b * bs + c * d.spatial;
                for (int64_t s = 0; s < d.spatial; ++s) {
                  const float xhat = (xv[base + s] - mu) * istd;
                  dx[base + s] += scale_ * (static_cast<float>(m) * dy[base + s] -
                                            sum_dy - xhat * sum_dy_xhat);
                }
              }
            } else {
              // Running statistics are constants w.r.t. the graph.
              const float scale_ = gc * istd;
              for (int64_t b = 0; b < d.batch; ++b) {
                const int64_t base = b * bs + c * d.spatial;
                simd::axpy(scale_, dy + base, dx + base, d.spatial);
              }
            }
          }
        });
  }
  return out;
}

Tensor layer_norm_last(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       float eps) {
  if (x.rank() < 1) detail::fail_shape("layer_norm_last", "needs rank >= 1");
  const int64_t dim = x.dim(-1);
  require_vec("layer_norm_last", gamma, dim, "gamma");
  require_vec("layer_norm_last", beta, dim, "beta");
  const int64_t rows = x.numel() / dim;

  auto mean = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  Tensor out = Tensor::zeros(x.shape());
  const float* xv = x.data();
  float* ov = out.data();
  const float* gv = gamma.data();
  const float* bv = beta.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = xv + r * dim;
    const float mu = simd::reduce_sum(row, dim) / static_cast<float>(dim);
    const float var = simd::reduce_sqdev(row, mu, dim) / static_cast<float>(dim);
    const float istd = 1.0f / std::sqrt(var + eps);
    (*mean)[static_cast<size_t>(r)] = mu;
    (*inv_std)[static_cast<size_t>(r)] = istd;
    float* orow = ov + r * dim;
    for (int64_t j = 0; j < dim; ++j) orow[j] = (row[j] - mu) * istd * gv[j] + bv[j];
  }
  detail::check_finite(out, "layer_norm_last");

  if (detail::want_grad({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, gamma, beta, out, rows, dim, mean, inv_std]() mutable {
      const float* dy = out.grad_data();
      const float* xv2 = x.data();
      const float* gv2 = gamma.data();
      for (int64_t r = 0; r < rows; ++r) {
        const float mu = (*mean)[static_cast<size_t>(r)];
        const float istd = (*inv_std)[static_cast<size_t>(r)];
        const float* dyr = dy + r * dim;
        const float* xr = xv2 + r * dim;
        float sum_dg = 0.0f;
        float sum_dg_xhat = 0.0f;
        for (int64_t j = 0; j < dim; ++j) {
          const float xhat = (xr[j] - mu) * istd;
          const float dg = dyr[j] * gv2[j];
          sum_dg += dg;
          sum_dg_xhat += dg * xhat;
          if (gamma.requires_grad()) gamma.grad_data()[j] += dyr[j] * xhat;
          if (beta.requires_grad()) beta.grad_data()[j] += dyr[j];
        }
        if (!x.requires_grad()) continue;
        float* dxr = x.grad_data() + r * dim;
        const float inv_dim = 1.0f / static_cast<float>(dim);
        for (int64_t j = 0; j < dim; ++j) {
          const float xhat = (xr[j] - mu) * istd;
          const float dg = dyr[j] * gv2[j];
          dxr[j] += istd * (dg - inv_dim * (sum_dg + xhat * sum_dg_xhat));
        }
      }
    });
  }
  return out;
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           float eps) {
  const NormDims d = norm_dims("layer_norm_channels", x);
  require_vec("layer_norm_channels", gamma, d.channels, "gamma");
  require_vec("layer_norm_channels", beta, d.channels, "beta");
  const int64_t positions = d.batch * d.spatial;
  const int64_t bs = d.channels * d.spatial;

  auto mean = std::make_shared<std::vector<float>>(static_cast<size_t>(positions));
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(positions));
  Tensor out = Tensor::zeros(x.shape());
  const float* xv = x.data();
  float* ov = out.data();
  const float* gv = gamma.data();
  const float* bv = beta.data();
  const float inv_c = 1.0f / static_cast<float>(d.channels);
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t s = 0; s < d.spatial; ++s) {
      const int64_t base = b * bs + s;
      float sum = 0.0f;
      for (int64_t c = 0; c < d.channels; ++c) sum += xv[base + c * d.spatial];
      const float mu = sum * inv_c;
      float sq = 0.0f;
      for (int64_t c = 0; c < d.channels; ++c) {
        const float dv = xv[base + c * d.spatial] - mu;
        sq += dv * dv;
      }
      const float istd = 1.0f / std::sqrt(sq * inv_c + eps);
      const int64_t pos = b * d.spatial + s;
      (*mean)[static_cast<size_t>(pos)] = mu;
      (*inv_std)[static_cast<size_t>(pos)] = istd;
      for (int64_t c = 0; c < d.channels; ++c) {
        ov[base + c * d.spatial] = (xv[base + c * d.spatial] - mu) * istd * gv[c] + bv[c];
      }
    }
  }
  detail::check_finite(out, "layer_norm_channels");

  if (detail::want_grad({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    GradTape::active()->record([x, gamma, beta, out, d, bs, mean, inv_std]() mutable {
      const float* dy = out.grad_data();
      const float* xv2 = x.data();
      const float* gv2 = gamma.data();
      const float inv_c = 1.0f / static_cast<float>(d.channels);
      for (int64_t b = 0; b < d.batch; ++b) {
        for (int64_t s = 0; s < d.spatial; ++s) {
          const int64_t base = b * bs + s;
          const int64_t pos = b * d.spatial + s;
          const float mu = (*mean)[static_cast<size_t>(pos)];
          const float istd = (*inv_std)[static_cast<size_t>(pos)];
          float sum_dg = 0.0f;
          float sum_dg_xhat = 0.0f;
          for (int64_t c = 0; c < d.channels; ++c) {
            const int64_t i = base + c * d.spatial;
            const float xhat = (xv2[i] - mu) * istd;
            const float dg = dy[i] * gv2[c];
            sum_dg += dg;
            sum_dg_xhat += dg * xhat;
            if (gamma.requires_grad()) gamma.grad_data()[c] += dy[i] * xhat;
            if (beta.requires_grad()) beta.grad_data()[c] += dy[i];
          }
          if (!x.requires_grad()) continue;
          float* dx = x.grad_data();
          for (int64_t c = 0; c < d.channels; ++c) {
            const int64_t i = base + c * d.spatial;
            const float xhat = (xv2[i] - mu) * istd;
            const float dg = dy[i] * gv2[c];
            dx[i] += istd * (dg - inv_c * (sum_dg + xhat * sum_dg_xhat));
          }
        }
      }
    });
  }
  return out;
}

}  // namespace qtseg::ops
