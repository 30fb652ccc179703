#pragma once

// Multi-level feature fusion. Each output stage concatenates one branch from
// every input stage — the branch from the stage itself contributes half the
// output channels, the other two a quarter each. Downsampling branches are
// strided ConvBlocks, upsampling branches ConvTransposeBlocks; branch{t}{s}
// feeds target stage t from source stage s. Output shapes equal input shapes.

#include "qtseg/blocks.hpp"
#include "qtseg/config.hpp"
#include "qtseg/encoder.hpp"

namespace qtseg {

struct Mlff {
  nn::ConvBlock branch00;           // n*4  -> n*2, 1x1
  nn::ConvTransposeBlock branch01;  // n*8  -> n*1, x2 up
  nn::ConvTransposeBlock branch02;  // n*16 -> n*1, x4 up
  nn::ConvBlock branch10;           // n*4  -> n*2, 3x3 stride 2
  nn::ConvBlock branch11;           // n*8  -> n*4, 1x1
  nn::ConvTransposeBlock branch12;  // n*16 -> n*2, x2 up
  nn::ConvBlock branch20;           // n*4  -> n*4, 3x3 stride 4
  nn::ConvBlock branch21;           // n*8  -> n*4, 3x3 stride 2
  nn::ConvBlock branch22;           // n*16 -> n*8, 1x1
  int64_t n = 16;

  static Mlff make(const ModelConfig& config, Rng& rng);

  PyramidFeatures forward(const PyramidFeatures& s) const;

  void params(const std::string& prefix, nn::NamedTensorList& out) const;
  void buffers(const std::string& prefix, nn::NamedTensorList& out) const;
};

}  // namespace qtseg
