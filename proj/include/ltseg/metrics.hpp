#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ltseg/tensor.hpp"

namespace ltseg {

// L x L counts, rows = ground truth, columns = prediction.
class Confusion {
 public:
  explicit Confusion(std::size_t num_classes);

  std::size_t num_classes() const { return num_classes_; }
  std::int64_t at(std::size_t truth, std::size_t pred) const {
    return counts_[truth * num_classes_ + pred];
  }
  std::int64_t total() const;

  void add(std::size_t truth, std::size_t pred, std::int64_t count = 1);
  // pred_ids and true_ids: equal-shaped tensors of class ids.
  void accumulate(const Tensor& pred_ids, const Tensor& true_ids);
  void merge(const Confusion& other);

 private:
  std::size_t num_classes_;
  std::vector<std::int64_t> counts_;
};

enum class DiceAggregate { Sum, Mean };

struct EvalReport {
  double miou = 0.0;                  // percent
  std::vector<double> per_class_iou;  // percent; NaN for classes with empty union
  double pix_acc = 0.0;               // percent
  double dice_err = 0.0;
};

// IoU_l = TP/(TP+FP+FN); classes with zero union are excluded from the mean.
// Dice error aggregates 1 - Dice_l over classes with a nonzero denominator.
EvalReport report(const Confusion& conf, DiceAggregate dice = DiceAggregate::Sum);

}  // namespace ltseg
