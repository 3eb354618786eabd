#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltseg/losses.hpp"

namespace ltseg {

struct GradcheckOptions {
  std::vector<LossKind> kinds{std::begin(kAllLossKinds), std::end(kAllLossKinds)};
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-8;
  // Negative control: perturbs one analytic gradient entry per trial.
  bool inject_fault = false;
};

// One loss configuration checked over all trials. PAT contributes four
// cases (both beta variants x stop-gradient / full differentiation).
struct GradcheckCase {
  std::string label;
  std::size_t trials = 0;
  std::size_t failures = 0;
  std::size_t components = 0;
  double max_rel_err = 0.0;  // over components whose difference exceeds abs_floor
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  bool passed() const;
};

// Random instances with B <= 2, L <= 4, H = W <= 4, random hyperparameters and
// mask-size normalization on or off; central differences on every logit.
// BLV noise is frozen by reusing the trial seed for all evaluations.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

std::string format_gradcheck_report(const GradcheckReport& report);

}  // namespace ltseg
