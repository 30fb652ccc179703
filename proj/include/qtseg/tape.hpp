#pragma once

#include <functional>
#include <vector>

#include "qtseg/tensor.hpp"

namespace qtseg {

// Reverse-mode gradient tape. While a TapeScope is active, every
// differentiable op appends a closure that propagates gradients from its
// output to its inputs; backward() seeds the loss gradient with 1 and
// replays the closures in reverse. Without an active scope ops run in pure
// inference mode and record nothing.
//
// The tape is thread-local by construction (one active tape per thread); the
// engine itself is single-threaded.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::function<void()> backward_fn);
  size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs all recorded closures newest-first.
  // `loss` must be a one-element tensor. An empty tape is a no-op.
  void backward(Tensor& loss);

  static GradTape* active();

 private:
  friend class TapeScope;
  std::vector<std::function<void()>> ops_;
};

// RAII activation of a tape. Scopes nest; the innermost wins.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* prev_;
};

// True when ops should record backward closures.
bool recording();

// Training-mode flag; batch norm switches between batch statistics and
// running statistics based on it. Defaults to inference.
bool training_mode();

class TrainingScope {
 public:
  explicit TrainingScope(bool on = true);
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;

 private:
  bool prev_;
};

}  // namespace qtseg
