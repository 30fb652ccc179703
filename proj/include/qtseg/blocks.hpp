#pragma once

// Parameterized building blocks composed from the core ops:
//
//   ConvBlock           conv -> batch norm -> SiLU
//   ConvTransposeBlock  transposed conv -> channel layer norm -> GELU
//   C2F                 1x1 entry, split-and-append bottleneck chain, 1x1 exit
//   Sppf                1x1 entry, three chained k=5 maxpools, concat, 1x1 exit
//   Attention           multi-head attention with per-side projections
//   Mlp                 linear / activation stack (no activation after the last)
//
// Blocks own their parameters as Tensors and expose a pure forward(). Batch
// norm running statistics are buffers, not parameters: forward() updates them
// in place when qtseg::training_mode() is on. Every block reports its tensors
// through params()/buffers() with dotted hierarchical names so optimizers and
// checkpoints can address them uniformly.

#include <string>
#include <utility>
#include <vector>

#include "qtseg/ops.hpp"
#include "qtseg/rng.hpp"
#include "qtseg/tensor.hpp"

namespace qtseg::nn {

// Ordered (name, tensor) pairs; order is the serialization order.
using NamedTensorList = std::vector<std::pair<std::string, Tensor>>;

// ---------------------------------------------------------------- ConvBlock

struct ConvBlock {
  Tensor weight;  // [c_out, c_in, k, k]
  Tensor bias;    // [c_out]
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  int stride = 1;
  ops::Padding padding = ops::Padding::kSame;
  float momentum = 0.1f;
  float eps = 1e-5f;

  static ConvBlock make(int64_t c_in, int64_t c_out, int kernel, int stride, Rng& rng,
                        ops::Padding padding = ops::Padding::kSame);

  Tensor forward(const Tensor& x) const;
  void params(const std::string& prefix, NamedTensorList& out) const;
  void buffers(const std::string& prefix, NamedTensorList& out) const;
};

// ------------------------------------------------------- ConvTransposeBlock

struct ConvTransposeBlock {
  Tensor weight;  // [c_in, c_out, k, k], kernel == stride
  Tensor bias;    // [c_out]
  Tensor gamma, beta;
  int stride = 2;

  static ConvTransposeBlock make(int64_t c_in, int64_t c_out, int kernel, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void params(const std::string& prefix, NamedTensorList& out) const;
};

// ---------------------------------------------------------------------- C2F

// Two 3x3 ConvBlocks with a residual add; channel count is preserved.
struct Bottleneck {
  ConvBlock conv1;
  ConvBlock conv2;

  static Bottleneck make(int64_t channels, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void params(const std::string& prefix, NamedTensorList& out) const;
  void buffers(const std::string& prefix, NamedTensorList& out) const;
};

// Entry 1x1 produces 2*c_mid channels split into two halves; each bottleneck
// consumes the latest chunk and appends its output; the concatenation of all
// (2 + b) chunks exits through a 1x1. Spatial dims are untouched.
struct C2F {
  ConvBlock entry;  // c_in -> 2 * c_mid
  std::vector<Bottleneck> bottlenecks;
  ConvBlock exit;  // (2 + b) * c_mid -> c_out
  int64_t c_mid = 0;

  static C2F make(int64_t c_in, int64_t c_out, int num_bottlenecks, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void params(const std::string& prefix, NamedTensorList& out) const;
  void buffers(const std::string& prefix, NamedTensorList& out) const;
};

// --------------------------------------------------------------------- SPPF

// Spatial pyramid pooling (fast): entry 1x1 to c/2, three chained maxpools
// (k=5, s=1, same padding), concat of the four stages, exit 1x1 back to c.
struct Sppf {
  ConvBlock entry;
  ConvBlock exit;

  static Sppf make(int64_t channels, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void params(const std::string& prefix, NamedTensorList& out) const;
  void buffers(const std::string& prefix, NamedTensorList& out) const;
};

// ---------------------------------------------------------------- Attention

// Multi-head attention over token sequences [T, D] or [B, T, D]. Inputs are
// projected to `internal_dim` (split across heads), attended, and projected
// back to `model_dim`. internal_dim < model_dim gives the down-projected
// variant used where full-width attention would be needlessly heavy.
struct Attention {
  Tensor wq, bq;  // [model_dim, internal_dim], [internal_dim]
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor wo, bo;  // [internal_dim, model_dim], [model_dim]
  int heads = 1;
  int64_t model_dim = 0;
  int64_t internal_dim = 0;

  static Attention make(int64_t model_dim, int heads, int64_t internal_dim, Rng& rng);

  // q: [*, T_q, D]; k, v: [*, T_k, D] with matching leading batch dims.
  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v) const;
  void params(const std::string& prefix, NamedTensorList& out) const;
};

// ---------------------------------------------------------------------- MLP

struct Mlp {
  std::vector<Tensor> weights;  // [d_i, d_{i+1}]
  std::vector<Tensor> biases;
  ops::Act act = ops::Act::kGelu;

  // dims = {in, hidden..., out}; one linear layer per consecutive pair.
  static Mlp make(const std::vector<int64_t>& dims, ops::Act act, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void params(const std::string& prefix, NamedTensorList& out) const;
};

}  // namespace qtseg::nn
