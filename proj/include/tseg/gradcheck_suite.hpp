#pragma once

#include <string>
#include <vector>

#include "tseg/gradcheck.hpp"

namespace tseg {

struct SuiteResult {
  std::string op;
  GradCheckReport report;
};

// Central finite-difference checks (f64) for every layer primitive plus a
// depth-1 U-Net + BCE pipeline over all its parameters. Layer ops use
// tolerance 1e-4, the composed model 1e-3.
std::vector<SuiteResult> run_gradcheck_suite();

bool suite_passed(const std::vector<SuiteResult>& results);

}  // namespace tseg
