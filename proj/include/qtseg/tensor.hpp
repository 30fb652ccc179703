#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qtseg/errors.hpp"
#include "qtseg/rng.hpp"

namespace qtseg {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major float32 tensor. The handle is value-semantic and cheap to
// copy; copies alias the same storage. Values are written once by the op
// that produces them — the only sanctioned in-place writers afterwards are
// the optimizer (parameter updates) and batch-norm running statistics.
// The gradient buffer is allocated lazily on first access and always has the
// same shape as the value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from_data(Shape shape, std::vector<float> data);
  static Tensor uniform(Shape shape, Rng& rng, float lo, float hi);
  static Tensor normal(Shape shape, Rng& rng, float mean, float stddev);
  // He-style uniform fan-in init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
  static Tensor kaiming_uniform(Shape shape, Rng& rng, int64_t fan_in);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  // Negative indices count from the back, as in dim(-1) for the last axis.
  int64_t dim(int i) const;
  int64_t numel() const;

  float* data();
  const float* data() const;
  std::span<float> values();
  std::span<const float> values() const;
  // Sole element of a one-element tensor.
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);

  // Gradient access is const on the handle: copies alias the same storage,
  // and backward closures accumulate through captured copies.
  bool has_grad() const;
  // Allocates a zeroed buffer on first use.
  std::span<float> grad() const;
  float* grad_data() const;
  // Read access; throws UsageError when no gradient has been materialized.
  std::span<const float> grad_checked() const;
  void zero_grad() const;

  bool shares_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // empty until first use
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  Node& node() const;

  std::shared_ptr<Node> node_;
};

}  // namespace qtseg
