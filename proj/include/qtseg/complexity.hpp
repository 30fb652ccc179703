#pragma once

// Parameter and arithmetic-cost accounting.
//
// Parameters are counted by building the model and summing tensor sizes, so
// the numbers are exact by construction. Multiply-accumulates are derived
// analytically by walking the architecture with the same shape arithmetic
// the forward pass uses; the unit tests cross-check the analytic count
// against an instrumented run of the actual kernels.
//
// Conventions (per image, batch 1):
//   macs        every gemm-backed op: convolutions K^2*Cin*Cout*Hout*Wout,
//               linear layers T*Din*Dout, matmuls M*K*N, attention adds the
//               QK^T and probs*V products (2*Tq*Tk*D_internal)
//   pointwise   one op per element for biases, normalizations, activations,
//               elementwise adds, softmax probabilities, pooling and resize
//               outputs; pure data movement is free
//   FLOPs       reported under both conventions: 1xMAC (macs + pointwise)
//               and 2xMAC (2*macs + pointwise)

#include <string>
#include <vector>

#include "qtseg/config.hpp"

namespace qtseg {

struct ComplexityReport {
  int64_t total_params = 0;
  std::vector<std::pair<std::string, int64_t>> module_params;
  int64_t input_size = 0;  // 0 when only parameters were counted
  int64_t macs = 0;
  int64_t pointwise_ops = 0;

  int64_t flops_1x() const { return macs + pointwise_ops; }
  int64_t flops_2x() const { return 2 * macs + pointwise_ops; }
};

// Parameter census only.
ComplexityReport count_params(const ModelConfig& config);

// Parameter census plus the analytic per-image MAC count at input_size.
ComplexityReport count_flops(const ModelConfig& config, int64_t input_size);

// Human-readable table for the CLI inspector.
std::string format_report(const ComplexityReport& report);

}  // namespace qtseg
