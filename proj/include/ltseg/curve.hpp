#pragma once

#include <string>
#include <vector>

#include "ltseg/losses.hpp"

namespace ltseg {

// A weighting curve to tabulate: focal with gamma = param, or PAT with
// temperature = param in the given beta variant.
struct CurveMethod {
  LossKind kind = LossKind::Focal;
  double param = 2.0;
  BetaVariant variant = BetaVariant::Standard;

  std::string label() const;  // "focal", "pat" (standard) or "pat-literal"
};

struct CurveRow {
  std::string method;
  double param = 0.0;
  double p = 0.0;
  double weight = 0.0;
  double loss = 0.0;
};

std::vector<CurveMethod> default_curve_methods();  // focal 2, 5; pat 2, 5
std::vector<double> default_curve_grid();          // 0.2, 0.3, ..., 0.9

// Single-pixel loss and weight at each true-class probability in p_grid,
// evaluated through the loss implementations on two-class logits.
std::vector<CurveRow> weighting_curve(const std::vector<CurveMethod>& methods,
                                      const std::vector<double>& p_grid, double epsilon = 1e-6);

std::string format_curve_csv(const std::vector<CurveRow>& rows);

}  // namespace ltseg
