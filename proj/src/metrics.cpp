#include "tseg/metrics.hpp"

namespace tseg {

ConfusionCounts confusion(const MaskGrid& pred, const MaskGrid& truth,
                          int class_id) {
  check_arg(pred.same_shape(truth),
            cat("confusion: pred shape ", shape_str(pred.shape()),
                " does not match truth ", shape_str(truth.shape())));
  check_arg(class_id >= 0, cat("confusion: invalid class id ", class_id));
  ConfusionCounts counts;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const bool in_pred = pred[i] == class_id;
    const bool in_truth = truth[i] == class_id;
    if (in_pred && in_truth)
      ++counts.tp;
    else if (in_pred)
      ++counts.fp;
    else if (in_truth)
      ++counts.fn;
    else
      ++counts.tn;
  }
  return counts;
}

double dice_from_counts(const ConfusionCounts& counts) {
  const std::int64_t denom = 2 * counts.tp + counts.fn + counts.fp;
  if (denom == 0) return 1.0;  // absent from both masks
  return 2.0 * static_cast<double>(counts.tp) / static_cast<double>(denom);
}

double dice_coefficient(const MaskGrid& pred, const MaskGrid& truth,
                        int class_id) {
  return dice_from_counts(confusion(pred, truth, class_id));
}

double macro_dice(const MaskGrid& pred, const MaskGrid& truth, int n_classes) {
  check_arg(n_classes >= 1, cat("macro_dice: n_classes must be >= 1, got ",
                                n_classes));
  double sum = 0.0;
  for (int c = 0; c < n_classes; ++c) sum += dice_coefficient(pred, truth, c);
  return sum / n_classes;
}

double pixel_accuracy(const MaskGrid& pred, const MaskGrid& truth) {
  check_arg(pred.same_shape(truth),
            cat("pixel_accuracy: pred shape ", shape_str(pred.shape()),
                " does not match truth ", shape_str(truth.shape())));
  check_arg(pred.numel() > 0, "pixel_accuracy: empty masks");
  std::int64_t agree = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i)
    if (pred[i] == truth[i]) ++agree;
  return static_cast<double>(agree) / static_cast<double>(pred.numel());
}

template <class T>
MaskGrid class_assign(const Tensor<T>& probs) {
  check_arg(probs.rank() == 3,
            cat("class_assign: probs must be (classes, H, W), got rank ",
                probs.rank()));
  const int classes = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  MaskGrid mask({h, w});
  for (std::int64_t p = 0; p < plane; ++p) {
    int best = 0;
    T best_v = probs[p];
    for (int c = 1; c < classes; ++c) {
      const T v = probs[static_cast<std::int64_t>(c) * plane + p];
      if (v > best_v) {  // strict > keeps the lowest index on ties
        best_v = v;
        best = c;
      }
    }
    mask[p] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

template MaskGrid class_assign<float>(const Tensor<float>&);
template MaskGrid class_assign<double>(const Tensor<double>&);

}  // namespace tseg
