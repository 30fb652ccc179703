#include "qtseg/tensor.hpp"

#include <cmath>
#include <sstream>

namespace qtseg {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace {

void validate_shape(const Shape& shape) {
  for (int64_t d : shape) {
    if (d <= 0) {
      throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  validate_shape(shape);
  auto node = std::make_shared<Node>();
  node->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t = zeros(std::move(shape));
  for (float& v : t.values()) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("from_data: " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, float lo, float hi) {
  Tensor t = zeros(std::move(shape));
  for (float& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::normal(Shape shape, Rng& rng, float mean, float stddev) {
  Tensor t = zeros(std::move(shape));
  for (float& v : t.values()) v = rng.normal(mean, stddev);
  return t;
}

Tensor Tensor::kaiming_uniform(Shape shape, Rng& rng, int64_t fan_in) {
  if (fan_in <= 0) throw UsageError("kaiming_uniform: fan_in must be positive");
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  return uniform(std::move(shape), rng, -bound, bound);
}

Tensor::Node& Tensor::node() const {
  if (!node_) throw UsageError("operation on an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

int Tensor::rank() const { return static_cast<int>(node().shape.size()); }

int64_t Tensor::dim(int i) const {
  const Shape& s = node().shape;
  const int r = static_cast<int>(s.size());
  if (i < 0) i += r;
  if (i < 0 || i >= r) {
    throw UsageError("dim index " + std::to_string(i) + " out of range for rank " +
                     std::to_string(r));
  }
  return s[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(node().value.size()); }

float* Tensor::data() { return node().value.data(); }
const float* Tensor::data() const { return node().value.data(); }

std::span<float> Tensor::values() { return {node().value.data(), node().value.size()}; }
std::span<const float> Tensor::values() const {
  return {node().value.data(), node().value.size()};
}

float Tensor::item() const {
  if (numel() != 1) {
    throw UsageError("item() requires a one-element tensor, shape is " +
                     shape_str(shape()));
  }
  return node().value[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  node().requires_grad = v;
  return *this;
}

bool Tensor::has_grad() const { return !node().grad.empty(); }

std::span<float> Tensor::grad() const {
  Node& n = node();
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0f);
  return {n.grad.data(), n.grad.size()};
}

float* Tensor::grad_data() const { return grad().data(); }

std::span<const float> Tensor::grad_checked() const {
  const Node& n = node();
  if (n.grad.empty()) {
    throw UsageError("gradient has not been materialized for this tensor");
  }
  return {n.grad.data(), n.grad.size()};
}

void Tensor::zero_grad() const {
  Node& n = node();
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0f);
}

}  // namespace qtseg
