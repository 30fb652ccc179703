#pragma once

// Segmentation quality metrics over discrete label maps. Labels are class
// indices stored as floats: 0 is background, 1..num_classes are foreground.
//
// Per image:
//   acc   percent of pixels whose labels match
//   mae   percent mean absolute difference between the foreground one-hot
//         encodings (one channel per foreground class; for a single class
//         this reduces to 100 - acc)
//   dice  2|P∩G| / (|P|+|G|) per foreground class, in percent
//   iou   |P∩G| / |P∪G| per foreground class, in percent
// dice/iou for a class absent from both maps score 100 (nothing to find,
// nothing hallucinated); the headline dice/iou are macro-averages over
// foreground classes. Split-level numbers average per-image reports.

#include <vector>

#include "qtseg/tensor.hpp"

namespace qtseg {

struct MetricsReport {
  double mae = 0.0;
  double acc = 0.0;
  double dice = 0.0;
  double iou = 0.0;
  std::vector<double> dice_per_class;  // one entry per foreground class
  std::vector<double> iou_per_class;
  int64_t images = 1;
};

// pred / gt: [H, W] label maps with identical shapes.
MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt,
                              int64_t num_classes);

// Equal-weight mean of per-image reports.
MetricsReport average_metrics(const std::vector<MetricsReport>& reports);

// Logits -> label map. Single class: sigmoid threshold at 0.5 (logit > 0).
// Multi-class: argmax over channels with an implicit background channel of
// logit 0; ties resolve to the lowest index. [N,H,W] -> [H,W] and
// [B,N,H,W] -> [B,H,W].
Tensor predict_labels(const Tensor& logits, int64_t num_classes);

}  // namespace qtseg
