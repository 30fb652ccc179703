// AVX2 + FMA kernel variants. This translation unit is the only one compiled
// with -mavx2 -mfma; it must never be entered on hardware without AVX2, which
// the dispatcher guarantees. Each function mirrors the scalar reference with
// 8-lane vectors plus a scalar remainder loop.

#include "qtseg/simd/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>

namespace qtseg::simd::avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

inline float hmax(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_max_ps(lo, hi);
  lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
  return _mm_cvtss_f32(lo);
}

void gemm_nn(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  const int64_t n8 = n & ~int64_t{7};
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0f);
    for (int64_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      const __m256 va = _mm256_set1_ps(av);
      const float* brow = b + p * n;
      int64_t j = 0;
      for (; j < n8; j += 8) {
        const __m256 vb = _mm256_loadu_ps(brow + j);
        const __m256 vc = _mm256_loadu_ps(crow + j);
        _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(va, vb, vc));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  const int64_t k8 = k & ~int64_t{7};
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      __m256 vacc = _mm256_setzero_ps();
      int64_t p = 0;
      for (; p < k8; p += 8) {
        vacc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p),
                               vacc);
      }
      float acc = hsum(vacc);
      for (; p < k; ++p) acc += arow[p] * brow[p];
      float& out = c[i * n + j];
      out = accumulate ? out + acc : acc;
    }
  }
}

void gemm_tn(const float* a, const float* b, float* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0f);
  const int64_t n8 = n & ~int64_t{7};
  for (int64_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const float av = arow[i];
      const __m256 va = _mm256_set1_ps(av);
      float* crow = c + i * n;
      int64_t j = 0;
      for (; j < n8; j += 8) {
        const __m256 vb = _mm256_loadu_ps(brow + j);
        const __m256 vc = _mm256_loadu_ps(crow + j);
        _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(va, vb, vc));
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void add(const float* a, const float* b, float* out, int64_t n) {
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) {
    _mm256_storeu_ps(out + i,
                     _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, int64_t n) {
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) {
    _mm256_storeu_ps(out + i,
                     _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, int64_t n) {
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) {
    _mm256_storeu_ps(out + i,
                     _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const float* x, float alpha, float* out, int64_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), va));
  }
  for (; i < n; ++i) out[i] = x[i] * alpha;
}

void axpy(float alpha, const float* x, float* y, int64_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) {
    const __m256 vy = _mm256_loadu_ps(y + i);
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

float reduce_sum(const float* x, int64_t n) {
  __m256 vacc = _mm256_setzero_ps();
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) vacc = _mm256_add_ps(vacc, _mm256_loadu_ps(x + i));
  float acc = hsum(vacc);
  for (; i < n; ++i) acc += x[i];
  return acc;
}

float reduce_sqdev(const float* x, float mean, int64_t n) {
  const __m256 vm = _mm256_set1_ps(mean);
  __m256 vacc = _mm256_setzero_ps();
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) {
    const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), vm);
    vacc = _mm256_fmadd_ps(d, d, vacc);
  }
  float acc = hsum(vacc);
  for (; i < n; ++i) {
    const float d = x[i] - mean;
    acc += d * d;
  }
  return acc;
}

float reduce_max(const float* x, int64_t n) {
  int64_t i = 0;
  float best;
  if (n >= 8) {
    __m256 vbest = _mm256_loadu_ps(x);
    const int64_t n8 = n & ~int64_t{7};
    for (i = 8; i < n8; i += 8) vbest = _mm256_max_ps(vbest, _mm256_loadu_ps(x + i));
    best = hmax(vbest);
  } else {
    best = x[0];
    i = 1;
  }
  for (; i < n; ++i) best = std::max(best, x[i]);
  return best;
}

void normalize_affine(const float* x, float mean, float inv_std, float gamma,
                      float beta, float* out, int64_t n) {
  const float a = inv_std * gamma;
  const float b = beta - mean * a;
  const __m256 va = _mm256_set1_ps(a);
  const __m256 vb = _mm256_set1_ps(b);
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_fmadd_ps(_mm256_loadu_ps(x + i), va, vb));
  }
  for (; i < n; ++i) out[i] = x[i] * a + b;
}

void relu(const float* x, float* out, int64_t n) {
  const __m256 vz = _mm256_setzero_ps();
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), vz));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* x, const float* dy, float* dx, int64_t n) {
  const __m256 vz = _mm256_setzero_ps();
  const int64_t n8 = n & ~int64_t{7};
  int64_t i = 0;
  for (; i < n8; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), vz, _CMP_GT_OQ);
    const __m256 vdy = _mm256_and_ps(_mm256_loadu_ps(dy + i), mask);
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), vdy));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0f) dx[i] += dy[i];
  }
}

}  // namespace

const KernelTable kTable = {
    .gemm_nn = gemm_nn,
    .gemm_nt = gemm_nt,
    .gemm_tn = gemm_tn,
    .add = add,
    .sub = sub,
    .mul = mul,
    .scale = scale,
    .axpy = axpy,
    .reduce_sum = reduce_sum,
    .reduce_sqdev = reduce_sqdev,
    .reduce_max = reduce_max,
    .normalize_affine = normalize_affine,
    .relu = relu,
    .relu_backward = relu_backward,
    .name = "avx2",
};

}  // namespace qtseg::simd::avx2

#endif  // __AVX2__ && __FMA__
