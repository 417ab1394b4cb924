#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tseg/tensor.hpp"

namespace tseg {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t worst_index = -1;
  bool finite = true;
};

struct GradCheckReport {
  bool passed = false;
  double tolerance = 0.0;
  std::vector<GradCheckEntry> entries;
  std::string summary() const;
};

// Central-difference check of an op reduced to a scalar.
//
// `points` are the tensors to perturb (inputs and/or parameters); `loss` must
// recompute the scalar from their current contents, and `analytic` must return
// one gradient per point, in order. The relative error uses an absolute floor
// of 1e-3 in the denominator so near-zero gradients are compared absolutely.
GradCheckReport finite_diff_check(
    const std::vector<std::pair<std::string, TensorD*>>& points,
    const std::function<double()>& loss,
    const std::function<std::vector<TensorD>()>& analytic, double step = 1e-5,
    double tolerance = 1e-4);

}  // namespace tseg
