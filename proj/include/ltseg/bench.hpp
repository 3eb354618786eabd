#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltseg/losses.hpp"

namespace ltseg {

struct BenchShape {
  std::size_t batch = 2, classes = 19, height = 64, width = 64;

  // psi: number of elements of one logits-sized tensor
  std::size_t psi() const { return batch * classes * height * width; }
};

struct BenchOptions {
  BenchShape shape;
  std::size_t reps = 20;  // at least 10
  std::size_t warmup = 3;
  std::uint64_t seed = 0;
  // Applied to every kind so all rows evaluate the same objective family.
  bool normalize_by_mask_size = false;
};

struct BenchRow {
  LossKind kind = LossKind::CE;
  double mean_s = 0.0;  // median of group means
  double std_s = 0.0;
  std::int64_t temp_tensors = 0;  // tensors allocated by one call
  std::int64_t temp_bytes = 0;    // peak tensor bytes above the pre-call level
  double psi_units = 0.0;         // temp_bytes / (8 * psi)
  bool noisy = false;             // std / mean > 0.25
};

struct BenchReport {
  BenchOptions options;
  std::vector<BenchRow> rows;  // one per loss kind, in kAllLossKinds order

  const BenchRow& row(LossKind kind) const;
};

// Single-threaded by contract; a second concurrent call throws.
BenchReport bench_losses(const BenchOptions& options);

std::string format_bench_csv(const BenchReport& report);

}  // namespace ltseg
