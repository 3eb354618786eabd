#include "ltseg/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "ltseg/alloc_counter.hpp"
#include "ltseg/error.hpp"

namespace ltseg {

namespace {

std::atomic<bool> g_bench_running{false};

struct RunGuard {
  RunGuard() {
    if (g_bench_running.exchange(true)) throw Error("bench: concurrent use is not supported");
  }
  ~RunGuard() { g_bench_running.store(false); }
  RunGuard(const RunGuard&) = delete;
  RunGuard& operator=(const RunGuard&) = delete;
};

double median_of_means(const std::vector<double>& xs, std::size_t group) {
  std::vector<double> means;
  for (std::size_t i = 0; i < xs.size(); i += group) {
    const std::size_t e = std::min(xs.size(), i + group);
    double s = 0.0;
    for (std::size_t k = i; k < e; ++k) s += xs[k];
    means.push_back(s / static_cast<double>(e - i));
  }
  std::sort(means.begin(), means.end());
  const std::size_t m = means.size();
  return m % 2 ? means[m / 2] : 0.5 * (means[m / 2 - 1] + means[m / 2]);
}

}  // namespace

const BenchRow& BenchReport::row(LossKind kind) const {
  for (const auto& r : rows) {
    if (r.kind == kind) return r;
  }
  throw Error("bench report has no row for " + to_string(kind));
}

BenchReport bench_losses(const BenchOptions& options) {
  RunGuard guard;
  if (options.reps < 10) throw Error("bench: at least 10 repetitions required");
  const auto& s = options.shape;
  if (s.batch == 0 || s.classes < 2 || s.height == 0 || s.width == 0) {
    throw Error("bench: shape must have B, H, W >= 1 and L >= 2");
  }

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::uniform_int_distribution<std::size_t> cls(0, s.classes - 1);

  Tensor logits({s.batch, s.classes, s.height, s.width});
  for (auto& v : logits.data()) v = normal(rng);
  Tensor ids({s.batch, s.height, s.width});
  std::vector<std::int64_t> counts(s.classes, 1);
  for (auto& v : ids.data()) {
    const auto c = cls(rng);
    v = static_cast<double>(c);
    ++counts[c];
  }
  const Tensor mask = onehot(ids, s.classes);
  const std::optional<ClassStats> stats = ClassStats::from_counts(counts);
  const double psi_bytes = 8.0 * static_cast<double>(s.psi());

  BenchReport report;
  report.options = options;
  for (LossKind kind : kAllLossKinds) {
    LossSpec spec = LossSpec::defaults(kind);
    spec.normalize_by_mask_size = options.normalize_by_mask_size;

    BenchRow row;
    row.kind = kind;

    AllocCounter::reset();
    const auto before = AllocCounter::snapshot();
    {
      const LossOutput out = compute_loss(spec, logits, mask, stats, options.seed);
      const auto after = AllocCounter::snapshot();
      row.temp_tensors = after.temp_tensor_count;
      row.temp_bytes = after.peak_bytes - before.live_bytes;
    }
    row.psi_units = static_cast<double>(row.temp_bytes) / psi_bytes;

    for (std::size_t i = 0; i < options.warmup; ++i) {
      (void)compute_loss(spec, logits, mask, stats, options.seed);
    }
    std::vector<double> times;
    times.reserve(options.reps);
    for (std::size_t i = 0; i < options.reps; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const LossOutput out = compute_loss(spec, logits, mask, stats, options.seed);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    row.std_s = std::sqrt(var / static_cast<double>(times.size() - 1));
    row.mean_s = median_of_means(times, 5);
    row.noisy = row.std_s > 0.25 * mean;
    report.rows.push_back(row);
  }
  return report;
}

std::string format_bench_csv(const BenchReport& report) {
  std::string s = "kind,mean_s,std_s,temp_tensors,temp_bytes,psi_units\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6e,%.6e,%lld,%lld,%.4f\n", to_string(r.kind).c_str(),
                  r.mean_s, r.std_s, static_cast<long long>(r.temp_tensors),
                  static_cast<long long>(r.temp_bytes), r.psi_units);
    s += buf;
  }
  return s;
}

}  // namespace ltseg
