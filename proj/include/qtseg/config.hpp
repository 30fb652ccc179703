#pragma once

// Model configuration. Every architectural width derives from the single
// multiplier `n`, so invalid layer combinations are unrepresentable; the
// remaining fields toggle the fusion module, the aggregation flavor, and
// bookkeeping (classes, input geometry, seed).

#include <array>
#include <cstdint>
#include <string>

namespace qtseg {

enum class Aggregation { kAdd, kConcat };

std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

struct ModelConfig {
  int64_t n = 16;             // width multiplier; channel counts are n * {1,2,4,8,16}
  int64_t num_classes = 1;    // foreground classes == query tokens
  int64_t input_channels = 3;
  int64_t input_size = 512;   // square inputs; must be divisible by 32
  int heads = 8;
  std::array<int, 3> h_blocks = {3, 2, 1};  // decoder depth per stage (coarse to fine)
  int64_t mlp_hidden = 2048;
  bool use_mlff = true;
  Aggregation aggregation = Aggregation::kAdd;
  uint64_t seed = 42;

  // Throws ConfigError when any invariant is violated.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  static ModelConfig load_file(const std::string& path);
};

}  // namespace qtseg
