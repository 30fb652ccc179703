#pragma once

#include <vector>

#include "qtseg/tape.hpp"
#include "qtseg/tensor.hpp"

namespace qtseg::ops {

// Differentiable tensor operations. Every op validates shapes up front
// (ShapeError), computes its output eagerly, checks the result for NaN/Inf
// (NumericError), and — when a tape is recording and any input requires
// grad — records a backward closure.
//
// Image-like ops accept both unbatched [C,H,W] and batched [B,C,H,W]
// layouts; token ops accept [T,D] and [B,T,D]. Shapes are asserted, never
// silently broadcast.

enum class Act { kSilu, kGelu, kRelu };
enum class Padding { kSame, kValid };
enum class ResizeMode { kNearest, kBilinear };

// NaN/Inf screening of op outputs. On by default; the toggle exists for
// benchmarking only.
void set_finite_checks(bool on);
bool finite_checks();

namespace detail {
void check_finite(const Tensor& t, const char* op_name);
[[noreturn]] void fail_shape(const char* op_name, const std::string& detail);
bool want_grad(std::initializer_list<const Tensor*> inputs);
}  // namespace detail

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);
Tensor add_scalar(const Tensor& x, float c);
Tensor activation(const Tensor& x, Act kind);
Tensor sigmoid(const Tensor& x);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);   // -> [1]
Tensor mean(const Tensor& x);  // -> [1]

// ---- shape & movement -----------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape);
// Swaps the trailing two axes; leading axes are batch.
Tensor matrix_transpose(const Tensor& x);
// Concatenation / slicing along the channel axis (axis rank-3) of [C,H,W]
// or [B,C,H,W] tensors.
Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor slice_channels(const Tensor& x, int64_t begin, int64_t end);
// Replicates x along a new leading batch axis; backward sums over it.
Tensor expand_batch(const Tensor& x, int64_t batch);
// [*,C,H,W] <-> [*,H*W,C] token layout conversions.
Tensor img2seq(const Tensor& x);
Tensor seq2img(const Tensor& x, int64_t h, int64_t w);

// ---- linear algebra -------------------------------------------------------

// [M,K]x[K,P], [B,M,K]x[B,K,P], or [B,M,K]x[K,P] (shared right operand).
Tensor matmul(const Tensor& a, const Tensor& b);
// x[...,Din] * w[Din,Dout] + b[Dout]; bias optional (undefined tensor).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// Softmax over the last axis.
Tensor softmax_rows(const Tensor& x);
// Softmax over the channel axis of [C,H,W] / [B,C,H,W].
Tensor softmax_channels(const Tensor& x);
// Scaled dot-product attention over heads of the last axis. Inputs are
// projected sequences [Tq,D] / [Tk,D] (optionally batched); D must divide
// by `heads`. `probs_out`, when given, receives the softmaxed attention
// matrix [heads*Tq,Tk] (or [B*heads*Tq,Tk]) for inspection.
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           int64_t heads, Tensor* probs_out = nullptr);

// ---- convolution family ---------------------------------------------------

// x [*,Cin,H,W], w [Cout,Cin,K,K], bias [Cout] (optional). kSame pads so
// out = ceil(in/stride), extra padding on bottom/right.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
              Padding padding);
// Transposed conv with kernel == stride (non-overlapping upsampling).
// w [Cin,Cout,K,K].
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int64_t stride);
// Max pool; same_padding pads with -inf so out = ceil(in/stride).
Tensor maxpool2d(const Tensor& x, int64_t k, int64_t stride, bool same_padding);
// Spatial resize by a rational factor num/den (both axes).
Tensor resize(const Tensor& x, int64_t num, int64_t den, ResizeMode mode);
Tensor resize_to(const Tensor& x, int64_t out_h, int64_t out_w, ResizeMode mode);

// ---- normalization --------------------------------------------------------

// Batch norm over [*,C,H,W]. In training mode normalizes with biased batch
// statistics and updates the running buffers in place (momentum-weighted);
// in inference mode uses the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, float momentum,
                  float eps);
// Layer norm over the last axis of [*,D] token tensors.
Tensor layer_norm_last(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       float eps = 1e-5f);
// Layer norm over the channel axis of [*,C,H,W] image tensors.
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           float eps = 1e-5f);

// ---- fused losses ---------------------------------------------------------

// Mean binary cross-entropy on logits (numerically stable log1p form).
// logits/targets share a shape; targets are 0/1.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets);
// Mean softmax cross-entropy: logits [*,C,H,W], target class indices
// [*,H,W] stored as floats in [0, C).
Tensor softmax_ce_mean(const Tensor& logits, const Tensor& targets);

}  // namespace qtseg::ops
