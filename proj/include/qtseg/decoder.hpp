#pragma once

// Multi-query mask decoder: three two-way attention stages walk the fused
// pyramid from the coarsest to the finest level. Each stage alternates token
// self-attention, token->image cross-attention, a token MLP, and
// image->token cross-attention, then runs one final token->image attention.
// Between stages, features are upsampled with ConvTransposeBlocks and
// aggregated with the next pyramid level (add, or concat + 1x1 projection),
// while tokens are re-projected by an MLP and joined by the next stage's
// learned query tokens. The mask head maps final tokens through a
// hypernetwork MLP and takes their dot product with the final feature map,
// producing one logit map per class at half resolution, bilinearly resized
// to the requested output size.

#include <optional>
#include <utility>

#include "qtseg/blocks.hpp"
#include "qtseg/config.hpp"
#include "qtseg/encoder.hpp"

namespace qtseg {

// Deterministic 2D sinusoidal embedding, shape [channels, height, width].
// Channels split evenly between the row and column axes; within an axis,
// adjacent channel pairs hold (sin, cos) at geometrically spaced frequencies,
// so every per-position vector has norm sqrt(channels/2).
Tensor positional_embedding(int64_t channels, int64_t height, int64_t width);

// Mask head: logits[b,i] = sum_c hypernet(tokens)[b,i,c] * features[b,c,:,:],
// evaluated at the feature resolution and bilinearly resized to out_h x out_w.
Tensor predict_mask(const Tensor& features, const Tensor& tokens,
                    const nn::Mlp& hypernet, int64_t out_h, int64_t out_w);

// One two-way attention stage operating on token sequences [B, N, F] and
// feature maps [B, F, H, W].
struct QmStage {
  struct Block {
    nn::Attention self_attn;   // full width
    nn::Attention cross_t2i;   // tokens attend to image, down-projected
    nn::Mlp mlp;               // F -> hidden -> F
    nn::Attention cross_i2t;   // image attends to tokens, down-projected
    Tensor ln_self_g, ln_self_b;
    Tensor ln_cross_g, ln_cross_b;
    Tensor ln_mlp_g, ln_mlp_b;
    Tensor ln_key_g, ln_key_b;
  };

  std::vector<Block> blocks;
  nn::Attention final_attn;  // down-projected
  Tensor ln_final_g, ln_final_b;
  int64_t dim = 0;

  static QmStage make(int64_t dim, int heads, int num_blocks, int64_t mlp_hidden,
                      Rng& rng);

  // tokens: [B, N, F]; feats: [B, F, H, W]. Returns (tokens', feats').
  std::pair<Tensor, Tensor> decode(const Tensor& tokens, const Tensor& feats) const;

  // Single-image transposed layout: tokens [F, N], feats [F, H, W].
  std::pair<Tensor, Tensor> decode_single(const Tensor& tokens,
                                          const Tensor& feats) const;

  void params(const std::string& prefix, nn::NamedTensorList& out) const;
};

struct Decoder {
  Tensor tokens2, tokens1, tokens0;  // learned query tokens, [N, F_i]
  QmStage stage2, stage1, stage0;
  nn::Mlp token_mlp2;  // n*16 -> hidden -> n*8
  nn::Mlp token_mlp1;  // n*8  -> hidden -> n*4
  nn::Mlp hypernet;    // n*4  -> hidden -> n*4
  nn::ConvTransposeBlock up2;   // n*16 -> n*8,  x2
  nn::ConvTransposeBlock up1;   // n*8  -> n*4,  x2
  nn::ConvTransposeBlock up0a;  // n*4  -> n*2,  x2
  nn::ConvTransposeBlock up0b;  // n*2  -> n*4,  x2
  std::optional<nn::ConvBlock> agg_proj1, agg_proj0;  // concat aggregation only
  Aggregation aggregation = Aggregation::kAdd;
  int64_t n = 16;

  static Decoder make(const ModelConfig& config, Rng& rng);

  // Intermediate outputs for inspection and tests.
  struct Trace {
    Tensor tokens_out2, feats_out2;
    Tensor tokens_out1, feats_out1;
    Tensor tokens_out0, feats_out0;
    Tensor final_features;  // [B, n*4, H/2, W/2]
    Tensor final_tokens;    // [B, N, n*4]
  };

  struct DecodeResult {
    Tensor features;  // [B, n*4, H/2, W/2]
    Tensor tokens;    // [B, N, n*4]
  };

  // sf: fused pyramid for an input of (out_h, out_w).
  DecodeResult decode_pyramid(const PyramidFeatures& sf, Trace* trace = nullptr) const;
  Tensor forward(const PyramidFeatures& sf, int64_t out_h, int64_t out_w,
                 Trace* trace = nullptr) const;

  void params(const std::string& prefix, nn::NamedTensorList& out) const;
  void buffers(const std::string& prefix, nn::NamedTensorList& out) const;
};

}  // namespace qtseg
