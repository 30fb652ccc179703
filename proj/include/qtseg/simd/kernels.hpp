#pragma once

#include <cstdint>

namespace qtseg::simd {

// The hot inner loops of the engine live behind this table. Every entry has
// a scalar reference implementation and (on x86-64 hardware that supports
// it) an AVX2+FMA variant; the active table is chosen once at startup.
// Set QTSEG_SIMD=scalar|avx2 in the environment to override detection.
//
// All matrices are dense row-major float32.

struct KernelTable {
  // C[m,n] = A[m,k] * B[k,n]            (accumulate: C +=)
  void (*gemm_nn)(const float* a, const float* b, float* c, int64_t m, int64_t k,
                  int64_t n, bool accumulate);
  // C[m,n] = A[m,k] * B[n,k]^T
  void (*gemm_nt)(const float* a, const float* b, float* c, int64_t m, int64_t k,
                  int64_t n, bool accumulate);
  // C[m,n] = A[k,m]^T * B[k,n]
  void (*gemm_tn)(const float* a, const float* b, float* c, int64_t m, int64_t k,
                  int64_t n, bool accumulate);

  void (*add)(const float* a, const float* b, float* out, int64_t n);
  void (*sub)(const float* a, const float* b, float* out, int64_t n);
  void (*mul)(const float* a, const float* b, float* out, int64_t n);
  void (*scale)(const float* x, float alpha, float* out, int64_t n);
  // y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, int64_t n);

  float (*reduce_sum)(const float* x, int64_t n);
  // sum((x - mean)^2)
  float (*reduce_sqdev)(const float* x, float mean, int64_t n);
  float (*reduce_max)(const float* x, int64_t n);

  // out = (x - mean) * inv_std * gamma + beta  (batch-norm inner loop)
  void (*normalize_affine)(const float* x, float mean, float inv_std, float gamma,
                           float beta, float* out, int64_t n);

  void (*relu)(const float* x, float* out, int64_t n);
  // dx += dy where x > 0
  void (*relu_backward)(const float* x, const float* dy, float* dx, int64_t n);

  const char* name;
};

enum class Level { kScalar, kAvx2 };

// Active kernel set. Resolution order: forced level (tests), QTSEG_SIMD
// environment override, CPU feature detection, scalar fallback.
const KernelTable& table();
Level active_level();
const char* active_name();
// Test hook; throws NumericError if the level is not available on this host.
void force_level(Level level);
bool avx2_available();

namespace scalar {
extern const KernelTable kTable;
}
namespace avx2 {
// Present only in builds where the compiler supports -mavx2.
extern const KernelTable kTable;
}

// Multiply-accumulate accounting. When a counter is installed, every gemm_*
// dispatch adds m*k*n to it. Used to cross-check the analytic complexity
// model against what the kernels actually execute.
void set_mac_counter(int64_t* counter);
int64_t* mac_counter();

inline void count_macs(int64_t m, int64_t k, int64_t n) {
  if (int64_t* c = mac_counter()) *c += m * k * n;
}

inline void gemm_nn(const float* a, const float* b, float* c, int64_t m, int64_t k,
                    int64_t n, bool accumulate = false) {
  count_macs(m, k, n);
  table().gemm_nn(a, b, c, m, k, n, accumulate);
}
inline void gemm_nt(const float* a, const float* b, float* c, int64_t m, int64_t k,
                    int64_t n, bool accumulate = false) {
  count_macs(m, k, n);
  table().gemm_nt(a, b, c, m, k, n, accumulate);
}
inline void gemm_tn(const float* a, const float* b, float* c, int64_t m, int64_t k,
                    int64_t n, bool accumulate = false) {
  count_macs(m, k, n);
  table().gemm_tn(a, b, c, m, k, n, accumulate);
}

inline void add(const float* a, const float* b, float* out, int64_t n) {
  table().add(a, b, out, n);
}
inline void sub(const float* a, const float* b, float* out, int64_t n) {
  table().sub(a, b, out, n);
}
inline void mul(const float* a, const float* b, float* out, int64_t n) {
  table().mul(a, b, out, n);
}
inline void scale(const float* x, float alpha, float* out, int64_t n) {
  table().scale(x, alpha, out, n);
}
inline void axpy(float alpha, const float* x, float* y, int64_t n) {
  table().axpy(alpha, x, y, n);
}
inline float reduce_sum(const float* x, int64_t n) { return table().reduce_sum(x, n); }
inline float reduce_sqdev(const float* x, float mean, int64_t n) {
  return table().reduce_sqdev(x, mean, n);
}
inline float reduce_max(const float* x, int64_t n) { return table().reduce_max(x, n); }
inline void normalize_affine(const float* x, float mean, float inv_std, float gamma,
                             float beta, float* out, int64_t n) {
  table().normalize_affine(x, mean, inv_std, gamma, beta, out, n);
}
inline void relu(const float* x, float* out, int64_t n) { table().relu(x, out, n); }
inline void relu_backward(const float* x, const float* dy, float* dx, int64_t n) {
  table().relu_backward(x, dy, dx, n);
}

}  // namespace qtseg::simd
