#pragma once

// Pyramid feature encoder. A strided ConvBlock/C2F backbone descends to
// stride 32, an SPPF block aggregates context at the bottom, and a top-down
// path (nearest x2 upsample, concat, C2F) followed by a bottom-up path
// (strided ConvBlock, concat, C2F) produces three feature maps at strides
// 8 / 16 / 32 with channel widths n*4 / n*8 / n*16.
//
// Layers are numbered by their position in the wiring graph; parameterless
// steps (upsample, concat) keep their slot numbers so the names below stay
// aligned with the graph:
//
//   0 cb    1 cb    2 c2f   3 cb    4 c2f   5 cb    6 c2f   7 cb    8 c2f
//   9 sppf  10 up   11 cat  12 c2f  13 up   14 cat  15 c2f (-> s0)
//   16 cb   17 cat  18 c2f (-> s1)  19 cb   20 cat  21 c2f (-> s2)

#include "qtseg/blocks.hpp"
#include "qtseg/config.hpp"

namespace qtseg {

struct PyramidFeatures {
  Tensor s0;  // [B, n*4,  H/8,  W/8]
  Tensor s1;  // [B, n*8,  H/16, W/16]
  Tensor s2;  // [B, n*16, H/32, W/32]
};

struct Encoder {
  nn::ConvBlock layer0, layer1, layer3, layer5, layer7, layer16, layer19;
  nn::C2F layer2, layer4, layer6, layer8, layer12, layer15, layer18, layer21;
  nn::Sppf layer9;
  int64_t n = 16;
  int64_t in_channels = 3;

  static Encoder make(const ModelConfig& config, Rng& rng);

  // image: [B, C, H, W] with H, W divisible by 32.
  PyramidFeatures forward(const Tensor& image) const;

  void params(const std::string& prefix, nn::NamedTensorList& out) const;
  void buffers(const std::string& prefix, nn::NamedTensorList& out) const;
};

}  // namespace qtseg
