#include "ltseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "ltseg/error.hpp"

namespace ltseg {

namespace {

struct Config {
  LossKind kind;
  BetaVariant variant = BetaVariant::Standard;
  bool differentiate_beta = false;
  std::string label;
};

std::vector<Config> expand(const std::vector<LossKind>& kinds) {
  std::vector<Config> out;
  for (auto k : kinds) {
    if (k != LossKind::PAT) {
      out.push_back({k, BetaVariant::Standard, false, to_string(k)});
      continue;
    }
    for (auto v : {BetaVariant::Standard, BetaVariant::Literal}) {
      for (bool full : {false, true}) {
        out.push_back({k, v, full, "pat[" + to_string(v) + (full ? ",full]" : ",stop]")});
      }
    }
  }
  return out;
}

}  // namespace

bool GradcheckReport::passed() const {
  return std::all_of(cases.begin(), cases.end(),
                     [](const GradcheckCase& c) { return c.failures == 0 && c.trials > 0; });
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (options.trials == 0) throw Error("gradcheck: trials must be >= 1");
  GradcheckReport report;
  std::uint64_t case_index = 0;
  for (const auto& cfg : expand(options.kinds)) {
    GradcheckCase result;
    result.label = cfg.label;
    std::mt19937_64 rng(options.seed * 1000003ull + case_index++);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.5);
    const auto pick = [&](std::size_t lo, std::size_t hi) {
      return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
    };

    for (std::size_t trial = 0; trial < options.trials; ++trial) {
      const std::size_t B = pick(1, 2), L = pick(2, 4), HW = pick(1, 4);
      Tensor logits({B, L, HW, HW});
      for (auto& v : logits.data()) v = normal(rng);
      Tensor ids({B, HW, HW});
      for (auto& v : ids.data()) v = static_cast<double>(pick(0, L - 1));
      const Tensor mask = onehot(ids, L);
      std::vector<std::int64_t> counts(L);
      for (auto& c : counts) c = static_cast<std::int64_t>(pick(1, 1000));
      const std::optional<ClassStats> stats = ClassStats::from_counts(counts);

      LossSpec spec = LossSpec::defaults(cfg.kind);
      spec.gamma = 0.5 + 4.0 * unit(rng);
      spec.beta_cb = 0.9 + 0.0999 * unit(rng);
      spec.max_margin = 0.1 + 0.9 * unit(rng);
      spec.scale_s = 1.0 + 19.0 * unit(rng);
      spec.sigma = 0.1 + 0.9 * unit(rng);
      spec.dist = unit(rng) < 0.5 ? NoiseDist::Gaussian : NoiseDist::Uniform;
      spec.temperature = 0.5 + 19.5 * unit(rng);
      spec.epsilon = 0.1 * unit(rng);
      spec.variant = cfg.variant;
      spec.differentiate_beta = cfg.differentiate_beta;
      spec.normalize_by_mask_size = unit(rng) < 0.5;
      const std::uint64_t noise_seed = rng();

      LossOutput analytic = compute_loss(spec, logits, mask, stats, noise_seed);
      if (options.inject_fault) {
        analytic.grad_logits[0] = analytic.grad_logits[0] * 1.01 + 1e-3;
      }

      // stop-gradient PAT is checked against the loss with its coefficients frozen
      const bool frozen = cfg.kind == LossKind::PAT && !cfg.differentiate_beta;
      const Tensor beta0 = frozen ? pat_beta(softmax_channels(logits), spec.temperature,
                                             spec.epsilon, spec.variant)
                                  : Tensor{};
      const auto value_at = [&](const Tensor& z) {
        return frozen ? pat_fixed_beta(z, mask, beta0, spec).value
                      : compute_loss(spec, z, mask, stats, noise_seed).value;
      };

      bool ok = true;
      Tensor probe = logits;
      for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i];
        probe[i] = z + options.step;
        const double up = value_at(probe);
        probe[i] = z - options.step;
        const double down = value_at(probe);
        probe[i] = z;
        const double numeric = (up - down) / (2.0 * options.step);
        const double a = analytic.grad_logits[i];
        const double diff = std::abs(a - numeric);
        const double scale = std::max(std::abs(a), std::abs(numeric));
        ++result.components;
        if (diff <= options.abs_floor) continue;
        const double rel = diff / scale;
        result.max_rel_err = std::max(result.max_rel_err, rel);
        if (rel > options.rel_tol) ok = false;
      }
      ++result.trials;
      if (!ok) ++result.failures;
    }
    report.cases.push_back(result);
  }
  return report;
}

std::string format_gradcheck_report(const GradcheckReport& report) {
  std::string s = "case,trials,failures,components,max_rel_err,status\n";
  char buf[200];
  for (const auto& c : report.cases) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.3e,%s\n", c.label.c_str(), c.trials,
                  c.failures, c.components, c.max_rel_err, c.failures == 0 ? "pass" : "FAIL");
    s += buf;
  }
  return s;
}

}  // namespace ltseg
