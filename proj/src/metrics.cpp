#include "qtseg/metrics.hpp"

#include <cmath>

#include "qtseg/errors.hpp"

namespace qtseg {

namespace {

int64_t label_at(const Tensor& t, int64_t i, int64_t num_classes, const char* who) {
  const float v = t.values()[i];
  const int64_t label = static_cast<int64_t>(std::lround(v));
  if (std::abs(v - static_cast<float>(label)) > 1e-3f || label < 0 ||
      label > num_classes) {
    throw ShapeError(std::string(who) + " label " + std::to_string(v) +
                     " outside [0, " + std::to_string(num_classes) + "]");
  }
  return label;
}

}  // namespace

MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt,
                              int64_t num_classes) {
  if (pred.rank() != 2 || !same_shape(pred.shape(), gt.shape())) {
    throw ShapeError("compute_metrics expects matching [H,W] label maps, got " +
                     shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  if (num_classes < 1) throw ConfigError("compute_metrics needs num_classes >= 1");

  const int64_t pixels = pred.numel();
  std::vector<int64_t> inter(static_cast<size_t>(num_classes), 0);
  std::vector<int64_t> p_count(static_cast<size_t>(num_classes), 0);
  std::vector<int64_t> g_count(static_cast<size_t>(num_classes), 0);
  int64_t correct = 0;
  int64_t onehot_diff = 0;  // mismatched channels of the one-hot encodings

  for (int64_t i = 0; i < pixels; ++i) {
    const int64_t p = label_at(pred, i, num_classes, "prediction");
    const int64_t g = label_at(gt, i, num_classes, "ground truth");
    if (p == g) {
      ++correct;
      if (p > 0) {
        ++inter[static_cast<size_t>(p - 1)];
        ++p_count[static_cast<size_t>(p - 1)];
        ++g_count[static_cast<size_t>(p - 1)];
      }
    } else {
      if (p > 0) {
        ++p_count[static_cast<size_t>(p - 1)];
        ++onehot_diff;
      }
      if (g > 0) {
        ++g_count[static_cast<size_t>(g - 1)];
        ++onehot_diff;
      }
    }
  }

  MetricsReport r;
  r.images = 1;
  r.acc = 100.0 * static_cast<double>(correct) / static_cast<double>(pixels);
  r.mae = 100.0 * static_cast<double>(onehot_diff) /
          static_cast<double>(pixels * num_classes);
  for (int64_t c = 0; c < num_classes; ++c) {
    const auto ci = static_cast<size_t>(c);
    const int64_t pc = p_count[ci];
    const int64_t gc = g_count[ci];
    const int64_t in = inter[ci];
    const int64_t un = pc + gc - in;
    const double dice =
        (pc + gc == 0) ? 100.0
                       : 200.0 * static_cast<double>(in) / static_cast<double>(pc + gc);
    const double iou =
        (un == 0) ? 100.0 : 100.0 * static_cast<double>(in) / static_cast<double>(un);
    r.dice_per_class.push_back(dice);
    r.iou_per_class.push_back(iou);
    r.dice += dice / static_cast<double>(num_classes);
    r.iou += iou / static_cast<double>(num_classes);
  }
  return r;
}

MetricsReport average_metrics(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ConfigError("average_metrics over an empty list");
  const size_t classes = reports.front().dice_per_class.size();
  MetricsReport avg;
  avg.images = 0;
  avg.dice_per_class.assign(classes, 0.0);
  avg.iou_per_class.assign(classes, 0.0);
  const double w = 1.0 / static_cast<double>(reports.size());
  for (const MetricsReport& r : reports) {
    if (r.dice_per_class.size() != classes) {
      throw ConfigError("average_metrics over reports with differing class counts");
    }
    avg.mae += w * r.mae;
    avg.acc += w * r.acc;
    avg.dice += w * r.dice;
    avg.iou += w * r.iou;
    for (size_t c = 0; c < classes; ++c) {
      avg.dice_per_class[c] += w * r.dice_per_class[c];
      avg.iou_per_class[c] += w * r.iou_per_class[c];
    }
    avg.images += r.images;
  }
  return avg;
}

Tensor predict_labels(const Tensor& logits, int64_t num_classes) {
  const bool batched = logits.rank() == 4;
  if (!batched && logits.rank() != 3) {
    throw ShapeError("predict_labels expects [N,H,W] or [B,N,H,W], got " +
                     shape_str(logits.shape()));
  }
  const int64_t batch = batched ? logits.dim(0) : 1;
  const int64_t ch = logits.dim(batched ? 1 : 0);
  const int64_t h = logits.dim(batched ? 2 : 1);
  const int64_t w = logits.dim(batched ? 3 : 2);
  if (ch != num_classes) {
    throw ShapeError("predict_labels got " + std::to_string(ch) +
                     " channels for " + std::to_string(num_classes) + " classes");
  }

  Tensor out = batched ? Tensor::zeros({batch, h, w}) : Tensor::zeros({h, w});
  const int64_t plane = h * w;
  for (int64_t b = 0; b < batch; ++b) {
    const float* src = logits.data() + b * ch * plane;
    float* dst = out.data() + b * plane;
    for (int64_t i = 0; i < plane; ++i) {
      if (num_classes == 1) {
        dst[i] = src[i] > 0.0f ? 1.0f : 0.0f;
      } else {
        int64_t best = 0;  // background, logit 0
        float best_v = 0.0f;
        for (int64_t c = 0; c < ch; ++c) {
          const float v = src[c * plane + i];
          if (v > best_v) {
            best_v = v;
            best = c + 1;
          }
        }
        dst[i] = static_cast<float>(best);
      }
    }
  }
  return out;
}

}  // namespace qtseg
