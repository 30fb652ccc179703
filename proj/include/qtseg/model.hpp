#pragma once

// Full segmentation model: pyramid encoder -> optional feature fusion ->
// multi-query mask decoder. Construction is a pure function of the config
// (the seed drives every weight draw in a fixed order), so two builds from
// the same config are bit-identical.

#include "qtseg/config.hpp"
#include "qtseg/decoder.hpp"
#include "qtseg/encoder.hpp"
#include "qtseg/mlff.hpp"

namespace qtseg {

struct QTSegModel {
  ModelConfig config;
  Encoder encoder;
  std::optional<Mlff> mlff;  // absent when config.use_mlff is false
  Decoder decoder;

  static QTSegModel build(const ModelConfig& config);

  // image: [B, C, H, W] or [C, H, W]; returns per-class logits [B, N, H, W]
  // (or [N, H, W] for the unbatched form). H, W must be divisible by 32.
  Tensor forward(const Tensor& image, Decoder::Trace* trace = nullptr) const;

  // Pyramid after optional fusion — the decoder's input view.
  PyramidFeatures backbone(const Tensor& image) const;

  nn::NamedTensorList named_parameters() const;
  nn::NamedTensorList named_buffers() const;
};

}  // namespace qtseg
