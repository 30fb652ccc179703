#include "qtseg/decoder.hpp"

#include <cmath>

#include "qtseg/errors.hpp"

namespace qtseg {

using nn::Attention;
using nn::ConvBlock;
using nn::ConvTransposeBlock;
using nn::Mlp;

namespace {

// Cross and final attentions run at half width; self-attention is full width.
constexpr int64_t kAttentionDownRate = 2;

Tensor make_ln_weight(int64_t dim, float value) {
  Tensor t = Tensor::full({dim}, value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

// ------------------------------------------------------ positional embedding

Tensor positional_embedding(int64_t channels, int64_t height, int64_t width) {
  if (channels % 4 != 0) {
    throw ConfigError("positional embedding needs channels divisible by 4, got " +
                      std::to_string(channels));
  }
  const int64_t per_axis = channels / 2;   // first half: rows, second: columns
  const int64_t num_freq = per_axis / 2;   // (sin, cos) pairs per axis
  std::vector<double> freq(static_cast<size_t>(num_freq));
  for (int64_t j = 0; j < num_freq; ++j) {
    const double expo =
        num_freq > 1 ? static_cast<double>(j) / static_cast<double>(num_freq - 1) : 0.0;
    freq[static_cast<size_t>(j)] = 2.0 * M_PI * std::pow(10000.0, -expo);
  }

  Tensor out = Tensor::zeros({channels, height, width});
  float* dst = out.data();
  const int64_t plane = height * width;
  for (int64_t y = 0; y < height; ++y) {
    const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
    for (int64_t x = 0; x < width; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
      const int64_t at = y * width + x;
      for (int64_t j = 0; j < num_freq; ++j) {
        const double ay = py * freq[static_cast<size_t>(j)];
        const double ax = px * freq[static_cast<size_t>(j)];
        dst[(2 * j + 0) * plane + at] = static_cast<float>(std::sin(ay));
        dst[(2 * j + 1) * plane + at] = static_cast<float>(std::cos(ay));
        dst[(per_axis + 2 * j + 0) * plane + at] = static_cast<float>(std::sin(ax));
        dst[(per_axis + 2 * j + 1) * plane + at] = static_cast<float>(std::cos(ax));
      }
    }
  }
  return out;
}

// ------------------------------------------------------------------ QmStage

QmStage QmStage::make(int64_t dim, int heads, int num_blocks, int64_t mlp_hidden,
                      Rng& rng) {
  if (dim % (kAttentionDownRate * heads) != 0) {
    throw ConfigError("stage dim " + std::to_string(dim) +
                      " not divisible by down rate * heads");
  }
  if (num_blocks < 1) throw ConfigError("stage needs at least one block");
  QmStage s;
  s.dim = dim;
  const int64_t down = dim / kAttentionDownRate;
  for (int i = 0; i < num_blocks; ++i) {
    Block b;
    b.self_attn = Attention::make(dim, heads, dim, rng);
    b.cross_t2i = Attention::make(dim, heads, down, rng);
    b.mlp = Mlp::make({dim, mlp_hidden, dim}, ops::Act::kGelu, rng);
    b.cross_i2t = Attention::make(dim, heads, down, rng);
    b.ln_self_g = make_ln_weight(dim, 1.0f);
    b.ln_self_b = make_ln_weight(dim, 0.0f);
    b.ln_cross_g = make_ln_weight(dim, 1.0f);
    b.ln_cross_b = make_ln_weight(dim, 0.0f);
    b.ln_mlp_g = make_ln_weight(dim, 1.0f);
    b.ln_mlp_b = make_ln_weight(dim, 0.0f);
    b.ln_key_g = make_ln_weight(dim, 1.0f);
    b.ln_key_b = make_ln_weight(dim, 0.0f);
    s.blocks.push_back(std::move(b));
  }
  s.final_attn = Attention::make(dim, heads, down, rng);
  s.ln_final_g = make_ln_weight(dim, 1.0f);
  s.ln_final_b = make_ln_weight(dim, 0.0f);
  return s;
}

std::pair<Tensor, Tensor> QmStage::decode(const Tensor& tokens,
                                          const Tensor& feats) const {
  if (tokens.rank() != 3 || tokens.dim(2) != dim) {
    throw ShapeError("stage expects tokens [B,N," + std::to_string(dim) + "], got " +
                     shape_str(tokens.shape()));
  }
  if (feats.rank() != 4 || feats.dim(1) != dim) {
    throw ShapeError("stage expects features [B," + std::to_string(dim) +
                     ",H,W], got " + shape_str(feats.shape()));
  }
  const int64_t batch = feats.dim(0);
  const int64_t h = feats.dim(2);
  const int64_t w = feats.dim(3);

  Tensor pe = ops::expand_batch(positional_embedding(dim, h, w), batch);
  Tensor key = ops::img2seq(ops::add(feats, pe));  // [B, HW, F]
  Tensor value = ops::img2seq(feats);

  Tensor query = tokens;
  for (size_t t = 0; t < blocks.size(); ++t) {
    const Block& b = blocks[t];
    Tensor sa = ops::layer_norm_last(b.self_attn.forward(query, query, query),
                                     b.ln_self_g, b.ln_self_b);
    // Only the entry block keeps the skip path around self-attention.
    query = (t == 0) ? ops::add(sa, query) : sa;

    Tensor ca = b.cross_t2i.forward(query, key, value);
    query = ops::layer_norm_last(ops::add(query, ca), b.ln_cross_g, b.ln_cross_b);
    query = ops::layer_norm_last(ops::add(b.mlp.forward(query), query), b.ln_mlp_g,
                                 b.ln_mlp_b);

    Tensor ka = b.cross_i2t.forward(key, query, query);
    key = ops::layer_norm_last(ops::add(key, ka), b.ln_key_g, b.ln_key_b);
  }

  // Final attention re-injects the stage's input tokens on the query side.
  Tensor q = ops::add(query, tokens);
  Tensor attn = final_attn.forward(q, key, value);
  Tensor tokens_out =
      ops::layer_norm_last(ops::add(query, attn), ln_final_g, ln_final_b);
  Tensor feats_out = ops::seq2img(key, h, w);
  return {tokens_out, feats_out};
}

std::pair<Tensor, Tensor> QmStage::decode_single(const Tensor& tokens,
                                                 const Tensor& feats) const {
  if (tokens.rank() != 2 || feats.rank() != 3) {
    throw ShapeError("decode_single expects tokens [F,N] and features [F,H,W]");
  }
  Tensor t = ops::reshape(ops::matrix_transpose(tokens), {1, tokens.dim(1), dim});
  Tensor f = ops::reshape(feats, {1, feats.dim(0), feats.dim(1), feats.dim(2)});
  auto [tokens_out, feats_out] = decode(t, f);
  Tensor t_out = ops::matrix_transpose(
      ops::reshape(tokens_out, {tokens.dim(1), dim}));
  Tensor f_out =
      ops::reshape(feats_out, {feats.dim(0), feats.dim(1), feats.dim(2)});
  return {t_out, f_out};
}

void QmStage::params(const std::string& prefix, nn::NamedTensorList& out) const {
  for (size_t i = 0; i < blocks.size(); ++i) {
    const Block& b = blocks[i];
    const std::string bp = prefix + ".block" + std::to_string(i);
    b.self_attn.params(bp + ".self_attn", out);
    out.emplace_back(bp + ".ln_self.gamma", b.ln_self_g);
    out.emplace_back(bp + ".ln_self.beta", b.ln_self_b);
    b.cross_t2i.params(bp + ".cross_t2i", out);
    out.emplace_back(bp + ".ln_cross.gamma", b.ln_cross_g);
    out.emplace_back(bp + ".ln_cross.beta", b.ln_cross_b);
    b.mlp.params(bp + ".mlp", out);
    out.emplace_back(bp + ".ln_mlp.gamma", b.ln_mlp_g);
    out.emplace_back(bp + ".ln_mlp.beta", b.ln_mlp_b);
    b.cross_i2t.params(bp + ".cross_i2t", out);
    out.emplace_back(bp + ".ln_key.gamma", b.ln_key_g);
    out.emplace_back(bp + ".ln_key.beta", b.ln_key_b);
  }
  final_attn.params(prefix + ".final_attn", out);
  out.emplace_back(prefix + ".ln_final.gamma", ln_final_g);
  out.emplace_back(prefix + ".ln_final.beta", ln_final_b);
}

// ------------------------------------------------------------------ Decoder

Decoder Decoder::make(const ModelConfig& config, Rng& rng) {
  config.validate();
  const int64_t n = config.n;
  const int64_t nc = config.num_classes;
  Decoder d;
  d.n = n;
  d.aggregation = config.aggregation;

  d.tokens2 = Tensor::normal({nc, n * 16}, rng, 0.0f, 0.02f);
  d.tokens1 = Tensor::normal({nc, n * 8}, rng, 0.0f, 0.02f);
  d.tokens0 = Tensor::normal({nc, n * 4}, rng, 0.0f, 0.02f);
  d.tokens2.set_requires_grad(true);
  d.tokens1.set_requires_grad(true);
  d.tokens0.set_requires_grad(true);

  d.stage2 = QmStage::make(n * 16, config.heads, config.h_blocks[0],
                           config.mlp_hidden, rng);
  d.stage1 = QmStage::make(n * 8, config.heads, config.h_blocks[1],
                           config.mlp_hidden, rng);
  d.stage0 = QmStage::make(n * 4, config.heads, config.h_blocks[2],
                           config.mlp_hidden, rng);

  d.token_mlp2 = Mlp::make({n * 16, config.mlp_hidden, n * 8}, ops::Act::kGelu, rng);
  d.token_mlp1 = Mlp::make({n * 8, config.mlp_hidden, n * 4}, ops::Act::kGelu, rng);
  d.hypernet = Mlp::make({n * 4, config.mlp_hidden, n * 4}, ops::Act::kGelu, rng);

  d.up2 = ConvTransposeBlock::make(n * 16, n * 8, 2, rng);
  d.up1 = ConvTransposeBlock::make(n * 8, n * 4, 2, rng);
  d.up0a = ConvTransposeBlock::make(n * 4, n * 2, 2, rng);
  d.up0b = ConvTransposeBlock::make(n * 2, n * 4, 2, rng);

  if (d.aggregation == Aggregation::kConcat) {
    d.agg_proj1 = ConvBlock::make(n * 16, n * 8, 1, 1, rng);
    d.agg_proj0 = ConvBlock::make(n * 8, n * 4, 1, 1, rng);
  }
  return d;
}

namespace {

// Join upsampled features with the next pyramid level.
Tensor aggregate(const Tensor& upsampled, const Tensor& skip, Aggregation mode,
                 const std::optional<ConvBlock>& proj) {
  if (mode == Aggregation::kAdd) {
    if (upsampled.dim(-3) != skip.dim(-3)) {
      throw ShapeError("add aggregation needs matching channel counts, got " +
                       std::to_string(upsampled.dim(-3)) + " vs " +
                       std::to_string(skip.dim(-3)));
    }
    return ops::add(upsampled, skip);
  }
  return proj->forward(ops::concat_channels({upsampled, skip}));
}

}  // namespace

Decoder::DecodeResult Decoder::decode_pyramid(const PyramidFeatures& sf,
                                              Trace* trace) const {
  if (sf.s2.rank() != 4) {
    throw ShapeError("decoder expects batched pyramid features [B,C,H,W]");
  }
  const int64_t batch = sf.s2.dim(0);

  Tensor t_in2 = ops::expand_batch(tokens2, batch);
  auto [t2, f2] = stage2.decode(t_in2, sf.s2);

  Tensor g1 = aggregate(up2.forward(f2), sf.s1, aggregation, agg_proj1);
  Tensor t_in1 =
      ops::add(token_mlp2.forward(t2), ops::expand_batch(tokens1, batch));
  auto [t1, f1] = stage1.decode(t_in1, g1);

  Tensor g0 = aggregate(up1.forward(f1), sf.s0, aggregation, agg_proj0);
  Tensor t_in0 =
      ops::add(token_mlp1.forward(t1), ops::expand_batch(tokens0, batch));
  auto [t0, f0] = stage0.decode(t_in0, g0);

  Tensor final_features = up0b.forward(up0a.forward(f0));
  if (trace != nullptr) {
    trace->tokens_out2 = t2;
    trace->feats_out2 = f2;
    trace->tokens_out1 = t1;
    trace->feats_out1 = f1;
    trace->tokens_out0 = t0;
    trace->feats_out0 = f0;
    trace->final_features = final_features;
    trace->final_tokens = t0;
  }
  return {final_features, t0};
}

Tensor Decoder::forward(const PyramidFeatures& sf, int64_t out_h, int64_t out_w,
                        Trace* trace) const {
  DecodeResult res = decode_pyramid(sf, trace);
  return predict_mask(res.features, res.tokens, hypernet, out_h, out_w);
}

Tensor predict_mask(const Tensor& features, const Tensor& tokens,
                    const Mlp& hypernet, int64_t out_h, int64_t out_w) {
  const bool batched = features.rank() == 4;
  if (!batched && features.rank() != 3) {
    throw ShapeError("predict_mask expects features [B,C,H,W] or [C,H,W]");
  }
  Tensor f = batched ? features
                     : ops::reshape(features, {1, features.dim(0), features.dim(1),
                                               features.dim(2)});
  Tensor t = tokens.rank() == 3
                 ? tokens
                 : ops::reshape(tokens, {1, tokens.dim(0), tokens.dim(1)});
  if (t.dim(0) != f.dim(0)) {
    throw ShapeError("predict_mask batch mismatch between tokens and features");
  }

  Tensor weights = hypernet.forward(t);  // [B, N, C]
  if (weights.dim(2) != f.dim(1)) {
    throw ShapeError("hypernetwork output dim " + std::to_string(weights.dim(2)) +
                     " does not match feature channels " + std::to_string(f.dim(1)));
  }
  // [B,C,H,W] flattened row-major is already [B,C,HW].
  Tensor fm = ops::reshape(f, {f.dim(0), f.dim(1), f.dim(2) * f.dim(3)});
  Tensor logits = ops::matmul(weights, fm);  // [B, N, HW]
  logits = ops::reshape(logits, {f.dim(0), weights.dim(1), f.dim(2), f.dim(3)});
  logits = ops::resize_to(logits, out_h, out_w, ops::ResizeMode::kBilinear);
  if (!batched) {
    logits = ops::reshape(logits, {weights.dim(1), out_h, out_w});
  }
  return logits;
}

void Decoder::params(const std::string& prefix, nn::NamedTensorList& out) const {
  out.emplace_back(prefix + ".tokens2", tokens2);
  out.emplace_back(prefix + ".tokens1", tokens1);
  out.emplace_back(prefix + ".tokens0", tokens0);
  stage2.params(prefix + ".stage2", out);
  stage1.params(prefix + ".stage1", out);
  stage0.params(prefix + ".stage0", out);
  token_mlp2.params(prefix + ".token_mlp2", out);
  token_mlp1.params(prefix + ".token_mlp1", out);
  hypernet.params(prefix + ".hypernet", out);
  up2.params(prefix + ".up2", out);
  up1.params(prefix + ".up1", out);
  up0a.params(prefix + ".up0a", out);
  up0b.params(prefix + ".up0b", out);
  if (agg_proj1) agg_proj1->params(prefix + ".agg_proj1", out);
  if (agg_proj0) agg_proj0->params(prefix + ".agg_proj0", out);
}

void Decoder::buffers(const std::string& prefix, nn::NamedTensorList& out) const {
  if (agg_proj1) agg_proj1->buffers(prefix + ".agg_proj1", out);
  if (agg_proj0) agg_proj0->buffers(prefix + ".agg_proj0", out);
}

}  // namespace qtseg
