#include "ltseg/metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "ltseg/error.hpp"

namespace ltseg {

Confusion::Confusion(std::size_t num_classes)
    : num_classes_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw Error("Confusion: number of classes must be positive");
}

std::int64_t Confusion::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

void Confusion::add(std::size_t truth, std::size_t pred, std::int64_t count) {
  if (truth >= num_classes_ || pred >= num_classes_) {
    throw Error("Confusion: class id out of range (truth " + std::to_string(truth) + ", pred " +
                std::to_string(pred) + ", L=" + std::to_string(num_classes_) + ")");
  }
  if (count < 0) throw Error("Confusion: negative count");
  counts_[truth * num_classes_ + pred] += count;
}

void Confusion::accumulate(const Tensor& pred_ids, const Tensor& true_ids) {
  if (pred_ids.shape() != true_ids.shape()) {
    throw Error("Confusion: prediction shape " + shape_to_string(pred_ids.shape()) +
                " differs from truth shape " + shape_to_string(true_ids.shape()));
  }
  const auto L = static_cast<double>(num_classes_);
  for (std::size_t i = 0; i < pred_ids.size(); ++i) {
    const double t = true_ids[i], p = pred_ids[i];
    if (!(t >= 0.0 && t < L) || !(p >= 0.0 && p < L)) {
      throw Error("Confusion: id out of range at index " + std::to_string(i) + " (truth " +
                  std::to_string(t) + ", pred " + std::to_string(p) + ")");
    }
    counts_[static_cast<std::size_t>(t) * num_classes_ + static_cast<std::size_t>(p)] += 1;
  }
}

void Confusion::merge(const Confusion& other) {
  if (other.num_classes_ != num_classes_) throw Error("Confusion: merge of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

EvalReport report(const Confusion& conf, DiceAggregate dice) {
  const std::int64_t total = conf.total();
  if (total == 0) throw Error("report: empty confusion matrix");
  const std::size_t L = conf.num_classes();
  EvalReport r;
  r.per_class_iou.assign(L, std::numeric_limits<double>::quiet_NaN());
  double iou_sum = 0.0, dice_sum = 0.0;
  std::size_t iou_n = 0, dice_n = 0;
  std::int64_t trace = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const std::int64_t tp = conf.at(l, l);
    std::int64_t fp = 0, fn = 0;
    for (std::size_t k = 0; k < L; ++k) {
      if (k == l) continue;
      fp += conf.at(k, l);
      fn += conf.at(l, k);
    }
    trace += tp;
    const std::int64_t uni = tp + fp + fn;
    if (uni > 0) {
      const double iou = static_cast<double>(tp) / static_cast<double>(uni);
      r.per_class_iou[l] = 100.0 * iou;
      iou_sum += iou;
      ++iou_n;
      const double d = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
      dice_sum += 1.0 - d;
      ++dice_n;
    }
  }
  r.miou = iou_n ? 100.0 * iou_sum / static_cast<double>(iou_n) : 0.0;
  r.pix_acc = 100.0 * static_cast<double>(trace) / static_cast<double>(total);
  r.dice_err = dice == DiceAggregate::Sum || dice_n == 0 ? dice_sum
                                                         : dice_sum / static_cast<double>(dice_n);
  return r;
}

}  // namespace ltseg
