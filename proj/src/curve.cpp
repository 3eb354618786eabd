#include "ltseg/curve.hpp"

#include <cmath>
#include <cstdio>

#include "ltseg/error.hpp"

namespace ltseg {

std::string CurveMethod::label() const {
  if (kind == LossKind::Focal) return "focal";
  if (kind == LossKind::PAT) return variant == BetaVariant::Standard ? "pat" : "pat-literal";
  return to_string(kind);
}

std::vector<CurveMethod> default_curve_methods() {
  return {{LossKind::Focal, 2.0, BetaVariant::Standard},
          {LossKind::Focal, 5.0, BetaVariant::Standard},
          {LossKind::PAT, 2.0, BetaVariant::Standard},
          {LossKind::PAT, 5.0, BetaVariant::Standard}};
}

std::vector<double> default_curve_grid() {
  std::vector<double> g;
  for (int i = 2; i <= 9; ++i) g.push_back(i / 10.0);
  return g;
}

std::vector<CurveRow> weighting_curve(const std::vector<CurveMethod>& methods,
                                      const std::vector<double>& p_grid, double epsilon) {
  for (double p : p_grid) {
    if (!(p > 0.0 && p < 1.0)) {
      throw Error("curve: probability " + std::to_string(p) + " is outside (0, 1)");
    }
  }
  const Tensor mask({1, 2, 1, 1}, {1.0, 0.0});
  std::vector<CurveRow> rows;
  for (const auto& m : methods) {
    LossSpec spec = LossSpec::defaults(m.kind);
    spec.normalize_by_mask_size = false;
    if (m.kind == LossKind::Focal) {
      spec.gamma = m.param;
    } else if (m.kind == LossKind::PAT) {
      spec.temperature = m.param;
      spec.epsilon = epsilon;
      spec.variant = m.variant;
    } else {
      throw Error("curve: only focal and pat curves are supported");
    }
    spec.validate();
    for (double p : p_grid) {
      const Tensor logits({1, 2, 1, 1}, {std::log(p), std::log1p(-p)});
      const LossOutput out = compute_loss(spec, logits, mask, std::nullopt, 0);
      const double weight = m.kind == LossKind::Focal
                                ? std::pow(1.0 - p, m.param)
                                : pat_beta_scalar(p, m.param, epsilon, m.variant);
      rows.push_back({m.label(), m.param, p, weight, out.value});
    }
  }
  return rows;
}

std::string format_curve_csv(const std::vector<CurveRow>& rows) {
  std::string s = "method,param,p,weight,loss\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%g,%.6g,%.8f,%.8f\n", r.method.c_str(), r.param, r.p,
                  r.weight, r.loss);
    s += buf;
  }
  return s;
}

}  // namespace ltseg
