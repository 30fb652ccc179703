#include "qtseg/tape.hpp"

namespace qtseg {
namespace {

thread_local GradTape* g_active_tape = nullptr;
thread_local bool g_training = false;

}  // namespace

void GradTape::record(std::function<void()> backward_fn) {
  ops_.push_back(std::move(backward_fn));
}

void GradTape::backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, shape is " +
                     shape_str(loss.shape()));
  }
  if (ops_.empty()) return;
  loss.grad()[0] = 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

GradTape* GradTape::active() { return g_active_tape; }

TapeScope::TapeScope(GradTape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

bool recording() { return g_active_tape != nullptr; }

bool training_mode() { return g_training; }

TrainingScope::TrainingScope(bool on) : prev_(g_training) { g_training = on; }

TrainingScope::~TrainingScope() { g_training = prev_; }

}  // namespace qtseg
