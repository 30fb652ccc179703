#include "qtseg/encoder.hpp"

#include "qtseg/errors.hpp"

namespace qtseg {

using nn::C2F;
using nn::ConvBlock;
using nn::Sppf;

Encoder Encoder::make(const ModelConfig& config, Rng& rng) {
  config.validate();
  const int64_t n = config.n;
  Encoder e;
  e.n = n;
  e.in_channels = config.input_channels;

  e.layer0 = ConvBlock::make(e.in_channels, n * 1, 3, 2, rng);
  e.layer1 = ConvBlock::make(n * 1, n * 2, 3, 2, rng);
  e.layer2 = C2F::make(n * 2, n * 2, 1, rng);
  e.layer3 = ConvBlock::make(n * 2, n * 4, 3, 2, rng);
  e.layer4 = C2F::make(n * 4, n * 4, 2, rng);
  e.layer5 = ConvBlock::make(n * 4, n * 8, 3, 2, rng);
  e.layer6 = C2F::make(n * 8, n * 8, 2, rng);
  e.layer7 = ConvBlock::make(n * 8, n * 16, 3, 2, rng);
  e.layer8 = C2F::make(n * 16, n * 16, 1, rng);
  e.layer9 = Sppf::make(n * 16, rng);

  // Top-down: upsampled features lead each concat.
  e.layer12 = C2F::make(n * 16 + n * 8, n * 8, 1, rng);
  e.layer15 = C2F::make(n * 8 + n * 4, n * 4, 1, rng);

  // Bottom-up: downsampled features lead each concat.
  e.layer16 = ConvBlock::make(n * 4, n * 4, 3, 2, rng);
  e.layer18 = C2F::make(n * 4 + n * 8, n * 8, 1, rng);
  e.layer19 = ConvBlock::make(n * 8, n * 8, 3, 2, rng);
  e.layer21 = C2F::make(n * 8 + n * 16, n * 16, 1, rng);
  return e;
}

PyramidFeatures Encoder::forward(const Tensor& image) const {
  if (image.rank() != 3 && image.rank() != 4) {
    throw ShapeError("encoder expects [C,H,W] or [B,C,H,W], got " +
                     shape_str(image.shape()));
  }
  const int64_t h = image.dim(-2);
  const int64_t w = image.dim(-1);
  if (h % 32 != 0 || w % 32 != 0) {
    throw ShapeError("encoder input dims must be divisible by 32, got " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  if (image.dim(-3) != in_channels) {
    throw ShapeError("encoder expects " + std::to_string(in_channels) +
                     " input channels, got " + std::to_string(image.dim(-3)));
  }

  Tensor x0 = layer0.forward(image);
  Tensor x1 = layer1.forward(x0);
  Tensor x2 = layer2.forward(x1);
  Tensor x3 = layer3.forward(x2);
  Tensor x4 = layer4.forward(x3);
  Tensor x5 = layer5.forward(x4);
  Tensor x6 = layer6.forward(x5);
  Tensor x7 = layer7.forward(x6);
  Tensor x8 = layer8.forward(x7);
  Tensor x9 = layer9.forward(x8);

  Tensor up10 = ops::resize(x9, 2, 1, ops::ResizeMode::kNearest);
  Tensor x12 = layer12.forward(ops::concat_channels({up10, x6}));
  Tensor up13 = ops::resize(x12, 2, 1, ops::ResizeMode::kNearest);
  Tensor s0 = layer15.forward(ops::concat_channels({up13, x4}));

  Tensor x16 = layer16.forward(s0);
  Tensor s1 = layer18.forward(ops::concat_channels({x16, x12}));
  Tensor x19 = layer19.forward(s1);
  Tensor s2 = layer21.forward(ops::concat_channels({x19, x9}));

  return {s0, s1, s2};
}

void Encoder::params(const std::string& prefix, nn::NamedTensorList& out) const {
  layer0.params(prefix + ".layer0", out);
  layer1.params(prefix + ".layer1", out);
  layer2.params(prefix + ".layer2", out);
  layer3.params(prefix + ".layer3", out);
  layer4.params(prefix + ".layer4", out);
  layer5.params(prefix + ".layer5", out);
  layer6.params(prefix + ".layer6", out);
  layer7.params(prefix + ".layer7", out);
  layer8.params(prefix + ".layer8", out);
  layer9.params(prefix + ".layer9", out);
  layer12.params(prefix + ".layer12", out);
  layer15.params(prefix + ".layer15", out);
  layer16.params(prefix + ".layer16", out);
  layer18.params(prefix + ".layer18", out);
  layer19.params(prefix + ".layer19", out);
  layer21.params(prefix + ".layer21", out);
}

void Encoder::buffers(const std::string& prefix, nn::NamedTensorList& out) const {
  layer0.buffers(prefix + ".layer0", out);
  layer1.buffers(prefix + ".layer1", out);
  layer2.buffers(prefix + ".layer2", out);
  layer3.buffers(prefix + ".layer3", out);
  layer4.buffers(prefix + ".layer4", out);
  layer5.buffers(prefix + ".layer5", out);
  layer6.buffers(prefix + ".layer6", out);
  layer7.buffers(prefix + ".layer7", out);
  layer8.buffers(prefix + ".layer8", out);
  layer9.buffers(prefix + ".layer9", out);
  layer12.buffers(prefix + ".layer12", out);
  layer15.buffers(prefix + ".layer15", out);
  layer16.buffers(prefix + ".layer16", out);
  layer18.buffers(prefix + ".layer18", out);
  layer19.buffers(prefix + ".layer19", out);
  layer21.buffers(prefix + ".layer21", out);
}

}  // namespace qtseg
