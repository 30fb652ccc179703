#pragma once

// Central-difference gradient verification. The analytic gradient from one
// taped backward pass is compared against (f(x+d) - f(x-d)) / 2d at randomly
// sampled parameter coordinates.
//
// Error metric: |analytic - numeric| / max(|analytic|, |numeric|, floor),
// required to stay below `tolerance`. The floor makes the test behave like
// an absolute comparison (at floor * tolerance) for near-zero gradients:
// a float32 forward pass carries rounding noise of a few ULP of the loss
// value, which the difference quotient amplifies by 1/delta, so ratios of
// tiny gradients are meaningless. The floor adapts to the measured loss
// magnitude — noise_factor * |f| / (delta * tolerance), never below `floor` —
// which keeps the absolute tolerance a small multiple of the expected noise
// for deep graphs while leaving sizable gradients verified at `tolerance`
// relative error. A genuinely wrong backward formula produces order-1
// relative errors on ordinary coordinates and still fails instantly.
//
// Non-differentiable coordinates (max-pool argmax switches, relu at zero)
// are detected by comparing the forward difference (f(x+d) - f(x)) / d with
// the backward difference (f(x) - f(x-d)) / d. For smooth functions the two
// agree to O(d * f''); a kink inside the probe window shows up as the full
// slope jump, and the coordinate is skipped because the central difference
// there averages two unrelated one-sided derivatives. Skips are capped — if
// more than a third of the samples land on kinks the check fails rather
// than quietly passing.

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "qtseg/rng.hpp"
#include "qtseg/tape.hpp"
#include "qtseg/tensor.hpp"

namespace gradcheck {

struct Options {
  double delta = 1e-3;
  double tolerance = 1e-2;     // max allowed relative error
  double floor = 0.2;          // denominator floor => absolute tol = floor * tolerance
  double noise_factor = 4e-7;  // float32 forward-eval noise, as a fraction of |f|
  int64_t max_coords = 50;     // sampled across all checked tensors
};

struct Result {
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
  int64_t coords_skipped = 0;  // kinks
  std::string worst;           // description of the worst coordinate

  bool ok(const Options& opt) const {
    return max_rel_err < opt.tolerance &&
           coords_skipped * 3 <= coords_checked + coords_skipped;
  }
};

// `fn` must be a deterministic function of `params` returning a scalar loss
// tensor. It is re-run many times with single coordinates perturbed.
inline Result run(const std::function<qtseg::Tensor()>& fn,
                  const std::vector<qtseg::Tensor>& params, qtseg::Rng& rng,
                  const Options& opt = {}) {
  using qtseg::GradTape;
  using qtseg::TapeScope;
  using qtseg::Tensor;

  // Analytic pass.
  for (const Tensor& p : params) p.zero_grad();
  GradTape tape;
  {
    TapeScope scope(tape);
    Tensor loss = fn();
    tape.backward(loss);
  }
  std::vector<std::vector<float>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  int64_t total = 0;
  for (const Tensor& p : params) total += p.numel();

  const double f_base = static_cast<double>(fn().item());
  const double floor = std::max(
      opt.floor, opt.noise_factor * std::abs(f_base) / (opt.delta * opt.tolerance));

  Result res;
  const int64_t budget = std::min<int64_t>(opt.max_coords, total);
  for (int64_t c = 0; c < budget; ++c) {
    // Pick a coordinate uniformly over the concatenated parameter space.
    int64_t flat = rng.uniform_int(0, total - 1);
    size_t pi = 0;
    while (flat >= params[pi].numel()) {
      flat -= params[pi].numel();
      ++pi;
    }
    Tensor p = params[pi];
    float* slot = p.data() + flat;
    const float saved = *slot;

    *slot = static_cast<float>(saved + opt.delta);
    const double f_plus = static_cast<double>(fn().item());
    *slot = static_cast<float>(saved - opt.delta);
    const double f_minus = static_cast<double>(fn().item());
    *slot = saved;

    const double fwd = (f_plus - f_base) / opt.delta;
    const double bwd = (f_base - f_minus) / opt.delta;
    if (std::abs(fwd - bwd) >
        0.1 * std::max({std::abs(fwd), std::abs(bwd), floor})) {
      ++res.coords_skipped;
      continue;
    }
    const double numeric = 0.5 * (fwd + bwd);

    const double a = static_cast<double>(analytic[pi][static_cast<size_t>(flat)]);
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    ++res.coords_checked;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst = "tensor " + std::to_string(pi) + " coord " + std::to_string(flat) +
                  ": analytic " + std::to_string(a) + " numeric " +
                  std::to_string(numeric);
    }
  }
  return res;
}

}  // namespace gradcheck
