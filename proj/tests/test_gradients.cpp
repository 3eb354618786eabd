#include <doctest.h>

#include <cmath>
#include <random>

#include "ltseg/gradcheck.hpp"
#include "ltseg/losses.hpp"

using namespace ltseg;

TEST_CASE("every loss configuration passes the finite-difference suite") {
  GradcheckOptions opt;
  opt.trials = 100;
  const GradcheckReport rep = run_gradcheck(opt);
  CHECK(rep.cases.size() == 11);
  for (const auto& c : rep.cases) {
    CHECK_MESSAGE(c.failures == 0, c.label);
    CHECK(c.trials == 100);
    CHECK(c.components > 0);
  }
  CHECK(rep.passed());
}

TEST_CASE("a corrupted gradient is caught") {
  GradcheckOptions opt;
  opt.trials = 10;
  opt.kinds = {LossKind::CE, LossKind::PAT};
  opt.inject_fault = true;
  const GradcheckReport rep = run_gradcheck(opt);
  CHECK_FALSE(rep.passed());
  for (const auto& c : rep.cases) CHECK(c.failures == c.trials);
  CHECK(format_gradcheck_report(rep).find("FAIL") != std::string::npos);
}

TEST_CASE("stop-gradient and full pat gradients differ but share the value") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor logits({1, 3, 2, 2});
  for (auto& v : logits.data()) v = d(rng);
  const Tensor mask = onehot(Tensor({1, 2, 2}, {0, 1, 2, 1}), 3);
  LossSpec spec = LossSpec::defaults(LossKind::PAT);
  spec.temperature = 2.0;
  const LossOutput stop = pat(logits, mask, spec);
  spec.differentiate_beta = true;
  const LossOutput full = pat(logits, mask, spec);
  CHECK(stop.value == full.value);
  CHECK(max_abs_diff(stop.grad_logits, full.grad_logits) > 1e-4);

  // frozen-coefficient evaluation reproduces pat at the same logits
  const Tensor beta = pat_beta(softmax_channels(logits), spec.temperature, spec.epsilon, spec.variant);
  CHECK(pat_fixed_beta(logits, mask, beta, spec).value == doctest::Approx(stop.value).epsilon(1e-15));
}

TEST_CASE("gradients sum to zero over channels") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d(0.0, 1.5);
  Tensor logits({2, 4, 3, 3});
  for (auto& v : logits.data()) v = d(rng);
  Tensor ids({2, 3, 3});
  for (auto& v : ids.data()) v = static_cast<double>(rng() % 4);
  const Tensor mask = onehot(ids, 4);
  const ClassStats stats = ClassStats::from_counts({40, 20, 5, 1});
  for (auto k : kAllLossKinds) {
    const LossOutput out = compute_loss(LossSpec::defaults(k), logits, mask, stats, 6);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 3; ++w) {
          double s = 0.0;
          for (std::size_t l = 0; l < 4; ++l) s += out.grad_logits.at(b, l, h, w);
          CHECK(std::abs(s) < 1e-12);
        }
  }
}
