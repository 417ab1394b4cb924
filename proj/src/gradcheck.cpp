#include "tseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tseg {

std::string GradCheckReport::summary() const {
  std::string out = passed ? "PASS" : "FAIL";
  out += cat(" (tolerance ", tolerance, ")\n");
  for (const auto& e : entries) {
    out += cat("  ", e.name, ": max rel err ", e.max_rel_err);
    if (!e.finite) out += cat(" [non-finite gradient at index ", e.worst_index, "]");
    out += "\n";
  }
  return out;
}

GradCheckReport finite_diff_check(
    const std::vector<std::pair<std::string, TensorD*>>& points,
    const std::function<double()>& loss,
    const std::function<std::vector<TensorD>()>& analytic, double step,
    double tolerance) {
  GradCheckReport report;
  report.tolerance = tolerance;

  const std::vector<TensorD> grads = analytic();
  check_arg(grads.size() == points.size(),
            cat("finite_diff_check: analytic returned ", grads.size(),
                " gradients for ", points.size(), " points"));

  bool ok = true;
  for (std::size_t i = 0; i < points.size(); ++i) {
    TensorD& value = *points[i].second;
    const TensorD& grad = grads[i];
    check_arg(grad.same_shape(value),
              cat("finite_diff_check: gradient shape ",
                  shape_str(grad.shape()), " does not match point '",
                  points[i].first, "' ", shape_str(value.shape())));

    GradCheckEntry entry;
    entry.name = points[i].first;
    for (std::int64_t j = 0; j < value.numel(); ++j) {
      const double a = grad[j];
      if (!std::isfinite(a)) {
        entry.finite = false;
        entry.worst_index = j;
        break;
      }
      const double saved = value[j];
      value[j] = saved + step;
      const double up = loss();
      value[j] = saved - step;
      const double down = loss();
      value[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-3});
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = j;
      }
    }
    if (!entry.finite || entry.max_rel_err > tolerance) ok = false;
    report.entries.push_back(std::move(entry));
  }
  report.passed = ok;
  return report;
}

}  // namespace tseg
