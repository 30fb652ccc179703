#include <cmath>

#include "qtseg/ops.hpp"

namespace qtseg::ops {
namespace {

bool g_finite_checks = true;

}  // namespace

void set_finite_checks(bool on) { g_finite_checks = on; }

bool finite_checks() { return g_finite_checks; }

namespace detail {

void check_finite(const Tensor& t, const char* op_name) {
  if (!g_finite_checks) return;
  for (float v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op_name) + " produced a non-finite value");
    }
  }
}

void fail_shape(const char* op_name, const std::string& detail) {
  throw ShapeError(std::string(op_name) + ": " + detail);
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace detail
}  // namespace qtseg::ops
