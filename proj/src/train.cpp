#include "qtseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "qtseg/errors.hpp"
#include "qtseg/ops.hpp"
#include "qtseg/tape.hpp"

namespace qtseg {

namespace {

// Class-c indicator of a label map, same layout as one logit channel.
Tensor indicator(const Tensor& mask, int64_t cls, int64_t h, int64_t w) {
  Tensor out = Tensor::zeros({mask.dim(0), 1, h, w});
  for (int64_t i = 0; i < mask.numel(); ++i) {
    out.data()[i] = mask.values()[i] == static_cast<float>(cls) ? 1.0f : 0.0f;
  }
  return out;
}

void check_labels(const Tensor& mask, int64_t num_classes) {
  for (const float v : mask.values()) {
    if (v < 0.0f || v > static_cast<float>(num_classes) ||
        v != std::floor(v)) {
      throw ShapeError("mask label " + std::to_string(v) + " outside [0, " +
                       std::to_string(num_classes) + "]");
    }
  }
}

// Soft-Dice loss over pooled batch pixels: 1 - (2*inter+1)/(|P|+|G|+1).
Tensor soft_dice_loss(const Tensor& probs, const Tensor& target) {
  Tensor inter = ops::sum(ops::mul(probs, target));
  Tensor num = ops::add_scalar(ops::scale(inter, 2.0f), 1.0f);
  Tensor den = ops::add_scalar(ops::add(ops::sum(probs), ops::sum(target)), 1.0f);
  return ops::sub(Tensor::full({1}, 1.0f), ops::div(num, den));
}

double schedule_lr(double base, int64_t epoch) {
  return std::max(base * std::pow(0.1, static_cast<double>(epoch / 50)), 1e-5);
}

}  // namespace

LossParts segmentation_loss(const Tensor& logits, const Tensor& mask,
                            int64_t num_classes) {
  const bool batched = logits.rank() == 4;
  if (!batched && logits.rank() != 3) {
    throw ShapeError("loss expects logits [B,N,H,W] or [N,H,W], got " +
                     shape_str(logits.shape()));
  }
  Tensor lg = batched ? logits
                      : ops::reshape(logits, {1, logits.dim(0), logits.dim(1),
                                              logits.dim(2)});
  Tensor mk = mask.rank() == 3
                  ? mask
                  : ops::reshape(mask, {1, mask.dim(0), mask.dim(1)});
  if (lg.dim(1) != num_classes) {
    throw ShapeError("loss got " + std::to_string(lg.dim(1)) +
                     " logit channels for " + std::to_string(num_classes) +
                     " classes");
  }
  if (lg.dim(0) != mk.dim(0) || lg.dim(2) != mk.dim(1) || lg.dim(3) != mk.dim(2)) {
    throw ShapeError("loss shape mismatch: logits " + shape_str(lg.shape()) +
                     " vs mask " + shape_str(mk.shape()));
  }
  check_labels(mk, num_classes);
  const int64_t h = lg.dim(2);
  const int64_t w = lg.dim(3);

  Tensor dice_loss, ce;
  if (num_classes == 1) {
    Tensor target = indicator(mk, 1, h, w);
    dice_loss = soft_dice_loss(ops::sigmoid(lg), target);
    ce = ops::bce_with_logits_mean(lg, target);
  } else {
    // Implicit background class with a constant zero logit at channel 0.
    Tensor bg = Tensor::zeros({lg.dim(0), 1, h, w});
    Tensor full = ops::concat_channels({bg, lg});
    ce = ops::softmax_ce_mean(full, mk);
    Tensor probs = ops::softmax_channels(full);
    Tensor acc;
    for (int64_t c = 1; c <= num_classes; ++c) {
      Tensor dl = soft_dice_loss(ops::slice_channels(probs, c, c + 1),
                                 indicator(mk, c, h, w));
      acc = acc.defined() ? ops::add(acc, dl) : dl;
    }
    dice_loss = ops::scale(acc, 1.0f / static_cast<float>(num_classes));
  }

  LossParts parts;
  parts.dice = static_cast<double>(dice_loss.item());
  parts.ce = static_cast<double>(ce.item());
  parts.total = ops::add(ops::scale(dice_loss, 0.5f), ops::scale(ce, 0.5f));
  return parts;
}

double lr_at(int64_t epoch) {
  if (epoch < 0) throw ConfigError("lr_at needs epoch >= 0");
  return schedule_lr(1e-3, epoch);
}

// ------------------------------------------------------------------- AdamW

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) {
      throw UsageError("optimizer step over a parameter with no gradient");
    }
    std::span<const float> g = p.grad_checked();
    std::span<float> x = p.values();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (size_t j = 0; j < m.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      const double theta = static_cast<double>(x[j]);
      x[j] = static_cast<float>(theta - config_.lr * config_.weight_decay * theta -
                                config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps));
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

// ------------------------------------------------------------ train / eval

TrainResult train_model(QTSegModel& model, const std::vector<Sample>& train,
                        const std::vector<Sample>& held_out,
                        const TrainOptions& options) {
  if (train.empty()) throw ConfigError("training set is empty");
  if (options.batch_size < 1) throw ConfigError("batch size must be positive");
  const int64_t num_classes = model.config.num_classes;

  std::vector<Tensor> params;
  for (const auto& [name, t] : model.named_parameters()) params.push_back(t);
  AdamWConfig opt_cfg;
  opt_cfg.lr = options.base_lr;
  opt_cfg.weight_decay = options.weight_decay;
  AdamW opt(params, opt_cfg);

  auto log = options.log ? options.log
                         : [](const std::string& line) { std::cout << line << "\n"; };

  Rng shuffle_rng(options.shuffle_seed);
  Rng augment_rng(options.shuffle_seed ^ 0x5eed5eed5eed5eedull);
  std::vector<int64_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

  TrainResult result;
  int64_t cursor = 0;
  int64_t epoch = -1;
  for (int64_t step = 0; step < options.max_steps; ++step) {
    if (cursor == 0) {
      ++epoch;
      opt.set_lr(schedule_lr(options.base_lr, epoch));
      for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i) {
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);
      }
    }

    const int64_t take = std::min<int64_t>(options.batch_size,
                                           static_cast<int64_t>(order.size()) - cursor);
    std::vector<Sample> batch;
    batch.reserve(static_cast<size_t>(take));
    std::vector<int64_t> batch_idx;
    for (int64_t i = 0; i < take; ++i) {
      const Sample& s = train[static_cast<size_t>(order[static_cast<size_t>(cursor + i)])];
      batch.push_back(options.augment ? augment(s, augment_rng) : s);
      batch_idx.push_back(i);
    }
    cursor += take;
    if (cursor >= static_cast<int64_t>(order.size())) cursor = 0;

    Tensor images = stack_images(batch, batch_idx);
    Tensor masks = stack_masks(batch, batch_idx);

    TrainingScope training;
    GradTape tape;
    LossParts loss;
    {
      TapeScope scope(tape);
      loss = segmentation_loss(model.forward(images), masks, num_classes);
    }
    opt.zero_grad();
    Tensor total = loss.total;
    tape.backward(total);
    opt.step();
    result.loss_history.push_back(static_cast<double>(total.item()));
    ++result.steps;

    if (options.log_every > 0 &&
        ((step + 1) % options.log_every == 0 || step + 1 == options.max_steps)) {
      log("step " + std::to_string(step + 1) + "/" +
          std::to_string(options.max_steps) + "  lr " + std::to_string(opt.lr()) +
          "  loss " + std::to_string(total.item()) + "  (dice " +
          std::to_string(loss.dice) + ", ce " + std::to_string(loss.ce) + ")");
    }
  }

  if (!held_out.empty()) {
    result.final_metrics = evaluate_model(model, held_out);
  }
  return result;
}

MetricsReport evaluate_model(const QTSegModel& model,
                             const std::vector<Sample>& samples) {
  if (samples.empty()) throw ConfigError("evaluation set is empty");
  std::vector<Tensor> preds, gts;
  preds.reserve(samples.size());
  gts.reserve(samples.size());
  for (const Sample& s : samples) {
    Tensor logits = model.forward(s.image);
    preds.push_back(predict_labels(logits, model.config.num_classes));
    gts.push_back(s.mask);
  }
  return evaluate_predictions(preds, gts, model.config.num_classes);
}

MetricsReport evaluate_predictions(const std::vector<Tensor>& preds,
                                   const std::vector<Tensor>& gts,
                                   int64_t num_classes) {
  if (preds.size() != gts.size() || preds.empty()) {
    throw ConfigError("evaluate_predictions needs matching non-empty lists");
  }
  std::vector<MetricsReport> reports;
  reports.reserve(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    reports.push_back(compute_metrics(preds[i], gts[i], num_classes));
  }
  return average_metrics(reports);
}

}  // namespace qtseg
