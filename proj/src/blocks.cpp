#include "qtseg/blocks.hpp"

#include <cmath>

#include "qtseg/errors.hpp"

namespace qtseg::nn {

namespace {

// Linear-layer init: uniform in +-1/sqrt(fan_in) for weight and bias.
Tensor linear_weight(int64_t d_in, int64_t d_out, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(d_in));
  return Tensor::uniform({d_in, d_out}, rng, -bound, bound);
}

Tensor linear_bias(int64_t d_in, int64_t d_out, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(d_in));
  return Tensor::uniform({d_out}, rng, -bound, bound);
}

void mark_param(Tensor& t) { t.set_requires_grad(true); }

}  // namespace

// ---------------------------------------------------------------- ConvBlock

ConvBlock ConvBlock::make(int64_t c_in, int64_t c_out, int kernel, int stride, Rng& rng,
                          ops::Padding padding) {
  ConvBlock b;
  b.weight = Tensor::kaiming_uniform({c_out, c_in, kernel, kernel}, rng,
                                     c_in * kernel * kernel);
  b.bias = Tensor::zeros({c_out});
  b.gamma = Tensor::full({c_out}, 1.0f);
  b.beta = Tensor::zeros({c_out});
  b.running_mean = Tensor::zeros({c_out});
  b.running_var = Tensor::full({c_out}, 1.0f);
  b.stride = stride;
  b.padding = padding;
  mark_param(b.weight);
  mark_param(b.bias);
  mark_param(b.gamma);
  mark_param(b.beta);
  return b;
}

Tensor ConvBlock::forward(const Tensor& x) const {
  Tensor y = ops::conv2d(x, weight, bias, stride, padding);
  // Copies of the buffer handles alias the same storage, so in-place running
  // stat updates stick while forward() stays const.
  Tensor rm = running_mean;
  Tensor rv = running_var;
  y = ops::batch_norm(y, gamma, beta, rm, rv, momentum, eps);
  return ops::activation(y, ops::Act::kSilu);
}

void ConvBlock::params(const std::string& prefix, NamedTensorList& out) const {
  out.emplace_back(prefix + ".conv.weight", weight);
  out.emplace_back(prefix + ".conv.bias", bias);
  out.emplace_back(prefix + ".bn.gamma", gamma);
  out.emplace_back(prefix + ".bn.beta", beta);
}

void ConvBlock::buffers(const std::string& prefix, NamedTensorList& out) const {
  out.emplace_back(prefix + ".bn.running_mean", running_mean);
  out.emplace_back(prefix + ".bn.running_var", running_var);
}

// ------------------------------------------------------- ConvTransposeBlock

ConvTransposeBlock ConvTransposeBlock::make(int64_t c_in, int64_t c_out, int kernel,
                                            Rng& rng) {
  ConvTransposeBlock b;
  // Each output pixel of a k==s transposed conv sees every input channel once.
  b.weight = Tensor::kaiming_uniform({c_in, c_out, kernel, kernel}, rng, c_in);
  b.bias = Tensor::zeros({c_out});
  b.gamma = Tensor::full({c_out}, 1.0f);
  b.beta = Tensor::zeros({c_out});
  b.stride = kernel;  // non-overlapping tiles: kernel == stride by contract
  mark_param(b.weight);
  mark_param(b.bias);
  mark_param(b.gamma);
  mark_param(b.beta);
  return b;
}

Tensor ConvTransposeBlock::forward(const Tensor& x) const {
  Tensor y = ops::conv_transpose2d(x, weight, bias, stride);
  y = ops::layer_norm_channels(y, gamma, beta);
  return ops::activation(y, ops::Act::kGelu);
}

void ConvTransposeBlock::params(const std::string& prefix, NamedTensorList& out) const {
  out.emplace_back(prefix + ".convt.weight", weight);
  out.emplace_back(prefix + ".convt.bias", bias);
  out.emplace_back(prefix + ".ln.gamma", gamma);
  out.emplace_back(prefix + ".ln.beta", beta);
}

// ---------------------------------------------------------------------- C2F

Bottleneck Bottleneck::make(int64_t channels, Rng& rng) {
  Bottleneck b;
  b.conv1 = ConvBlock::make(channels, channels, 3, 1, rng);
  b.conv2 = ConvBlock::make(channels, channels, 3, 1, rng);
  return b;
}

Tensor Bottleneck::forward(const Tensor& x) const {
  return ops::add(x, conv2.forward(conv1.forward(x)));
}

void Bottleneck::params(const std::string& prefix, NamedTensorList& out) const {
  conv1.params(prefix + ".conv1", out);
  conv2.params(prefix + ".conv2", out);
}

void Bottleneck::buffers(const std::string& prefix, NamedTensorList& out) const {
  conv1.buffers(prefix + ".conv1", out);
  conv2.buffers(prefix + ".conv2", out);
}

C2F C2F::make(int64_t c_in, int64_t c_out, int num_bottlenecks, Rng& rng) {
  if (c_out % 2 != 0) {
    throw ConfigError("c2f requires an even output channel count, got " +
                      std::to_string(c_out));
  }
  if (num_bottlenecks < 1) {
    throw ConfigError("c2f requires at least one bottleneck");
  }
  C2F b;
  b.c_mid = c_out / 2;
  b.entry = ConvBlock::make(c_in, 2 * b.c_mid, 1, 1, rng);
  for (int i = 0; i < num_bottlenecks; ++i) {
    b.bottlenecks.push_back(Bottleneck::make(b.c_mid, rng));
  }
  b.exit = ConvBlock::make(static_cast<int64_t>(2 + num_bottlenecks) * b.c_mid, c_out,
                           1, 1, rng);
  return b;
}

Tensor C2F::forward(const Tensor& x) const {
  Tensor y = entry.forward(x);
  std::vector<Tensor> chunks;
  chunks.push_back(ops::slice_channels(y, 0, c_mid));
  chunks.push_back(ops::slice_channels(y, c_mid, 2 * c_mid));
  for (const Bottleneck& b : bottlenecks) {
    chunks.push_back(b.forward(chunks.back()));
  }
  return exit.forward(ops::concat_channels(chunks));
}

void C2F::params(const std::string& prefix, NamedTensorList& out) const {
  entry.params(prefix + ".entry", out);
  for (size_t i = 0; i < bottlenecks.size(); ++i) {
    bottlenecks[i].params(prefix + ".bottleneck" + std::to_string(i), out);
  }
  exit.params(prefix + ".exit", out);
}

void C2F::buffers(const std::string& prefix, NamedTensorList& out) const {
  entry.buffers(prefix + ".entry", out);
  for (size_t i = 0; i < bottlenecks.size(); ++i) {
    bottlenecks[i].buffers(prefix + ".bottleneck" + std::to_string(i), out);
  }
  exit.buffers(prefix + ".exit", out);
}

// --------------------------------------------------------------------- SPPF

Sppf Sppf::make(int64_t channels, Rng& rng) {
  if (channels % 2 != 0) {
    throw ConfigError("sppf requires an even channel count, got " +
                      std::to_string(channels));
  }
  Sppf b;
  b.entry = ConvBlock::make(channels, channels / 2, 1, 1, rng);
  b.exit = ConvBlock::make(2 * channels, channels, 1, 1, rng);
  return b;
}

Tensor Sppf::forward(const Tensor& x) const {
  Tensor y0 = entry.forward(x);
  Tensor y1 = ops::maxpool2d(y0, 5, 1, /*same_padding=*/true);
  Tensor y2 = ops::maxpool2d(y1, 5, 1, /*same_padding=*/true);
  Tensor y3 = ops::maxpool2d(y2, 5, 1, /*same_padding=*/true);
  return exit.forward(ops::concat_channels({y0, y1, y2, y3}));
}

void Sppf::params(const std::string& prefix, NamedTensorList& out) const {
  entry.params(prefix + ".entry", out);
  exit.params(prefix + ".exit", out);
}

void Sppf::buffers(const std::string& prefix, NamedTensorList& out) const {
  entry.buffers(prefix + ".entry", out);
  exit.buffers(prefix + ".exit", out);
}

// ---------------------------------------------------------------- Attention

Attention Attention::make(int64_t model_dim, int heads, int64_t internal_dim,
                          Rng& rng) {
  if (internal_dim % heads != 0) {
    throw ConfigError("attention internal dim " + std::to_string(internal_dim) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  Attention a;
  a.heads = heads;
  a.model_dim = model_dim;
  a.internal_dim = internal_dim;
  a.wq = linear_weight(model_dim, internal_dim, rng);
  a.bq = linear_bias(model_dim, internal_dim, rng);
  a.wk = linear_weight(model_dim, internal_dim, rng);
  a.bk = linear_bias(model_dim, internal_dim, rng);
  a.wv = linear_weight(model_dim, internal_dim, rng);
  a.bv = linear_bias(model_dim, internal_dim, rng);
  a.wo = linear_weight(internal_dim, model_dim, rng);
  a.bo = linear_bias(internal_dim, model_dim, rng);
  for (Tensor* t : {&a.wq, &a.bq, &a.wk, &a.bk, &a.wv, &a.bv, &a.wo, &a.bo}) {
    mark_param(*t);
  }
  return a;
}

Tensor Attention::forward(const Tensor& q, const Tensor& k, const Tensor& v) const {
  if (q.dim(-1) != model_dim || k.dim(-1) != model_dim || v.dim(-1) != model_dim) {
    throw ShapeError("attention inputs must have trailing dim " +
                     std::to_string(model_dim));
  }
  Tensor qp = ops::linear(q, wq, bq);
  Tensor kp = ops::linear(k, wk, bk);
  Tensor vp = ops::linear(v, wv, bv);
  Tensor attn = ops::multihead_attention(qp, kp, vp, heads);
  return ops::linear(attn, wo, bo);
}

void Attention::params(const std::string& prefix, NamedTensorList& out) const {
  out.emplace_back(prefix + ".q.weight", wq);
  out.emplace_back(prefix + ".q.bias", bq);
  out.emplace_back(prefix + ".k.weight", wk);
  out.emplace_back(prefix + ".k.bias", bk);
  out.emplace_back(prefix + ".v.weight", wv);
  out.emplace_back(prefix + ".v.bias", bv);
  out.emplace_back(prefix + ".out.weight", wo);
  out.emplace_back(prefix + ".out.bias", bo);
}

// ---------------------------------------------------------------------- MLP

Mlp Mlp::make(const std::vector<int64_t>& dims, ops::Act act, Rng& rng) {
  if (dims.size() < 2) {
    throw ConfigError("mlp needs at least an input and an output dim");
  }
  Mlp m;
  m.act = act;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    m.weights.push_back(linear_weight(dims[i], dims[i + 1], rng));
    m.biases.push_back(linear_bias(dims[i], dims[i + 1], rng));
    mark_param(m.weights.back());
    mark_param(m.biases.back());
  }
  return m;
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor y = x;
  for (size_t i = 0; i < weights.size(); ++i) {
    y = ops::linear(y, weights[i], biases[i]);
    if (i + 1 < weights.size()) y = ops::activation(y, act);
  }
  return y;
}

void Mlp::params(const std::string& prefix, NamedTensorList& out) const {
  for (size_t i = 0; i < weights.size(); ++i) {
    const std::string layer = prefix + ".layer" + std::to_string(i);
    out.emplace_back(layer + ".weight", weights[i]);
    out.emplace_back(layer + ".bias", biases[i]);
  }
}

}  // namespace qtseg::nn
