#include "qtseg/mlff.hpp"

#include "qtseg/errors.hpp"

namespace qtseg {

using nn::ConvBlock;
using nn::ConvTransposeBlock;

Mlff Mlff::make(const ModelConfig& config, Rng& rng) {
  config.validate();
  const int64_t n = config.n;
  Mlff m;
  m.n = n;
  m.branch00 = ConvBlock::make(n * 4, n * 2, 1, 1, rng);
  m.branch01 = ConvTransposeBlock::make(n * 8, n * 1, 2, rng);
  m.branch02 = ConvTransposeBlock::make(n * 16, n * 1, 4, rng);
  m.branch10 = ConvBlock::make(n * 4, n * 2, 3, 2, rng);
  m.branch11 = ConvBlock::make(n * 8, n * 4, 1, 1, rng);
  m.branch12 = ConvTransposeBlock::make(n * 16, n * 2, 2, rng);
  m.branch20 = ConvBlock::make(n * 4, n * 4, 3, 4, rng);
  m.branch21 = ConvBlock::make(n * 8, n * 4, 3, 2, rng);
  m.branch22 = ConvBlock::make(n * 16, n * 8, 1, 1, rng);
  return m;
}

PyramidFeatures Mlff::forward(const PyramidFeatures& s) const {
  if (s.s0.dim(-3) != n * 4 || s.s1.dim(-3) != n * 8 || s.s2.dim(-3) != n * 16) {
    throw ShapeError("fusion expects channel widths (" + std::to_string(n * 4) + ", " +
                     std::to_string(n * 8) + ", " + std::to_string(n * 16) +
                     "), got (" + std::to_string(s.s0.dim(-3)) + ", " +
                     std::to_string(s.s1.dim(-3)) + ", " +
                     std::to_string(s.s2.dim(-3)) + ")");
  }
  if (s.s0.dim(-1) != 2 * s.s1.dim(-1) || s.s1.dim(-1) != 2 * s.s2.dim(-1) ||
      s.s0.dim(-2) != 2 * s.s1.dim(-2) || s.s1.dim(-2) != 2 * s.s2.dim(-2)) {
    throw ShapeError("fusion expects a 2x spatial step between pyramid stages");
  }
  PyramidFeatures out;
  out.s0 = ops::concat_channels(
      {branch00.forward(s.s0), branch01.forward(s.s1), branch02.forward(s.s2)});
  out.s1 = ops::concat_channels(
      {branch10.forward(s.s0), branch11.forward(s.s1), branch12.forward(s.s2)});
  out.s2 = ops::concat_channels(
      {branch20.forward(s.s0), branch21.forward(s.s1), branch22.forward(s.s2)});
  return out;
}

void Mlff::params(const std::string& prefix, nn::NamedTensorList& out) const {
  branch00.params(prefix + ".branch00", out);
  branch01.params(prefix + ".branch01", out);
  branch02.params(prefix + ".branch02", out);
  branch10.params(prefix + ".branch10", out);
  branch11.params(prefix + ".branch11", out);
  branch12.params(prefix + ".branch12", out);
  branch20.params(prefix + ".branch20", out);
  branch21.params(prefix + ".branch21", out);
  branch22.params(prefix + ".branch22", out);
}

void Mlff::buffers(const std::string& prefix, nn::NamedTensorList& out) const {
  branch00.buffers(prefix + ".branch00", out);
  branch10.buffers(prefix + ".branch10", out);
  branch11.buffers(prefix + ".branch11", out);
  branch20.buffers(prefix + ".branch20", out);
  branch21.buffers(prefix + ".branch21", out);
  branch22.buffers(prefix + ".branch22", out);
}

}  // namespace qtseg
