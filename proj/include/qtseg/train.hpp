#pragma once

// Training: the segmentation objective, a decoupled-weight-decay Adam
// optimizer, the step-decay learning-rate schedule, and the train/eval loops
// used by the CLI and the convergence tests.

#include <functional>
#include <string>
#include <vector>

#include "qtseg/data.hpp"
#include "qtseg/metrics.hpp"
#include "qtseg/model.hpp"

namespace qtseg {

// 0.5 * soft-Dice loss + 0.5 * cross-entropy.
//   Single class: sigmoid probabilities, binary cross-entropy on logits.
//   Multi-class: a constant zero background logit channel is prepended,
//   softmax cross-entropy over classes; soft Dice averages the foreground
//   channels. Soft Dice uses +1 smoothing on both sides of the ratio and
//   pools pixels across the whole batch.
// logits: [B,N,H,W] or [N,H,W]; mask: [B,H,W] or [H,W] class indices.
struct LossParts {
  Tensor total;    // differentiable scalar
  double dice = 0.0;  // value of the soft-Dice term
  double ce = 0.0;    // value of the cross-entropy term
};

LossParts segmentation_loss(const Tensor& logits, const Tensor& mask,
                            int64_t num_classes);

// Step decay: 1e-3 * 0.1^floor(epoch/50), clamped below at 1e-5.
double lr_at(int64_t epoch);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam with decoupled weight decay:
//   theta <- theta - lr*wd*theta - lr * m_hat / (sqrt(v_hat) + eps)
// Moments and arithmetic are double precision; parameters stay float32.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  int64_t steps() const { return step_; }

  // Applies one update from the gradients currently on the parameters.
  // A parameter with no materialized gradient is a usage error.
  void step();
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig config_;
  int64_t step_ = 0;
};

struct TrainOptions {
  int64_t max_steps = 2000;
  int64_t batch_size = 8;
  double base_lr = 1e-3;
  double weight_decay = 1e-4;
  bool augment = true;
  uint64_t shuffle_seed = 1;
  int64_t log_every = 50;       // 0 silences progress lines
  std::function<void(const std::string&)> log;  // defaults to stdout
};

struct TrainResult {
  std::vector<double> loss_history;  // one entry per step
  MetricsReport final_metrics;       // on the held-out samples
  int64_t steps = 0;
};

// Shuffled mini-batch training with the step-decay schedule; one epoch is a
// full pass over the shuffled training list. Metrics are computed on `held_out`
// after the final step (empty held_out skips evaluation).
TrainResult train_model(QTSegModel& model, const std::vector<Sample>& train,
                        const std::vector<Sample>& held_out,
                        const TrainOptions& options);

// Per-image inference + metric averaging over a sample list.
MetricsReport evaluate_model(const QTSegModel& model,
                             const std::vector<Sample>& samples);

// Metric averaging over already-computed label maps (the eval core).
MetricsReport evaluate_predictions(const std::vector<Tensor>& preds,
                                   const std::vector<Tensor>& gts,
                                   int64_t num_classes);

}  // namespace qtseg
