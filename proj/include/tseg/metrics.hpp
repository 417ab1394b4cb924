#pragma once

#include <cstdint>
#include <vector>

#include "tseg/tensor.hpp"

namespace tseg {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
};

// Per-class pixel counts from an exhaustive scan of two equal-shape masks.
ConfusionCounts confusion(const MaskGrid& pred, const MaskGrid& truth,
                          int class_id);

// 2*TP / (2*TP + FN + FP). A class absent from both masks counts as perfect
// agreement (1.0).
double dice_from_counts(const ConfusionCounts& counts);
double dice_coefficient(const MaskGrid& pred, const MaskGrid& truth,
                        int class_id);

// Unweighted mean of per-class Dice over classes 0..n_classes-1.
double macro_dice(const MaskGrid& pred, const MaskGrid& truth, int n_classes);

// Fraction of pixels where pred equals truth.
double pixel_accuracy(const MaskGrid& pred, const MaskGrid& truth);

// Per-pixel argmax over the class axis of a (classes, H, W) probability
// tensor; ties break toward the lowest class index.
template <class T>
MaskGrid class_assign(const Tensor<T>& probs);

}  // namespace tseg
