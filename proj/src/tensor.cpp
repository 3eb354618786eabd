#include "ltseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "ltseg/error.hpp"

namespace ltseg {

namespace {

std::atomic<std::int64_t> g_live{0};
std::atomic<std::int64_t> g_peak{0};
std::atomic<std::int64_t> g_count{0};

std::string index_to_string(const Shape& shape, std::size_t flat) {
  std::vector<std::size_t> coord(shape.size());
  for (std::size_t a = shape.size(); a-- > 0;) {
    coord[a] = flat % shape[a];
    flat /= shape[a];
  }
  std::ostringstream os;
  os << '[';
  for (std::size_t a = 0; a < coord.size(); ++a) os << (a ? "," : "") << coord[a];
  os << ']';
  return os.str();
}

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw Error(std::string(op) + ": expected a [B,L,H,W] tensor, got shape " +
                shape_to_string(t.shape()));
  }
}

}  // namespace

void AllocCounter::record_alloc(std::size_t bytes) noexcept {
  const auto live = g_live.fetch_add(static_cast<std::int64_t>(bytes)) +
                    static_cast<std::int64_t>(bytes);
  auto peak = g_peak.load();
  while (live > peak && !g_peak.compare_exchange_weak(peak, live)) {
  }
  g_count.fetch_add(1);
}

void AllocCounter::record_free(std::size_t bytes) noexcept {
  g_live.fetch_sub(static_cast<std::int64_t>(bytes));
}

AllocSnapshot AllocCounter::snapshot() noexcept {
  return {g_live.load(), g_peak.load(), g_count.load()};
}

void AllocCounter::reset() noexcept {
  g_peak.store(g_live.load());
  g_count.store(0);
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t a = 0; a < shape.size(); ++a) os << (a ? "," : "") << shape[a];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty()) throw Error("Tensor: shape must have at least one dimension");
  for (auto d : shape_) {
    if (d == 0) throw Error("Tensor: zero-sized dimension in shape " + shape_to_string(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::span<const double> values) : shape_(std::move(shape)) {
  if (shape_.empty()) throw Error("Tensor: shape must have at least one dimension");
  for (auto d : shape_) {
    if (d == 0) throw Error("Tensor: zero-sized dimension in shape " + shape_to_string(shape_));
  }
  if (values.size() != shape_numel(shape_)) {
    throw Error("Tensor: " + std::to_string(values.size()) + " values for shape " +
                shape_to_string(shape_));
  }
  data_.assign(values.begin(), values.end());
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), std::span<const double>(values.begin(), values.size())) {}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto da = a.data();
  auto db = b.data();
  return std::equal(da.begin(), da.end(), db.begin(), [](double x, double y) {
    return std::memcmp(&x, &y, sizeof(double)) == 0;
  });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("max_abs_diff: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_finite(const Tensor& t, const char* what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw Error(std::string(what) + ": non-finite value " + std::to_string(t[i]) +
                  " at index " + index_to_string(t.shape(), i));
    }
  }
}

Tensor softmax_channels(const Tensor& logits) {
  require_rank4(logits, "softmax_channels");
  require_finite(logits, "softmax_channels");
  const auto B = logits.dim(0), L = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  Tensor out(logits.shape());
  const double* in = logits.data().data();
  double* o = out.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    const double* ib = in + b * L * HW;
    double* ob = o + b * L * HW;
    for (std::size_t j = 0; j < HW; ++j) {
      double m = ib[j];
      for (std::size_t l = 1; l < L; ++l) m = std::max(m, ib[l * HW + j]);
      double sum = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        const double e = std::exp(ib[l * HW + j] - m);
        ob[l * HW + j] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::size_t l = 0; l < L; ++l) ob[l * HW + j] *= inv;
    }
  }
  return out;
}

Tensor log_softmax_channels(const Tensor& logits) {
  require_rank4(logits, "log_softmax_channels");
  require_finite(logits, "log_softmax_channels");
  const auto B = logits.dim(0), L = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  Tensor out(logits.shape());
  const double* in = logits.data().data();
  double* o = out.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    const double* ib = in + b * L * HW;
    double* ob = o + b * L * HW;
    for (std::size_t j = 0; j < HW; ++j) {
      double m = ib[j];
      for (std::size_t l = 1; l < L; ++l) m = std::max(m, ib[l * HW + j]);
      double sum = 0.0;
      for (std::size_t l = 0; l < L; ++l) sum += std::exp(ib[l * HW + j] - m);
      const double lse = m + std::log(sum);
      for (std::size_t l = 0; l < L; ++l) ob[l * HW + j] = ib[l * HW + j] - lse;
    }
  }
  return out;
}

Tensor onehot(const Tensor& indices, std::size_t num_classes) {
  if (indices.rank() != 3) {
    throw Error("onehot: expected [B,H,W] class ids, got shape " +
                shape_to_string(indices.shape()));
  }
  if (num_classes == 0) throw Error("onehot: number of classes must be positive");
  const auto B = indices.dim(0), H = indices.dim(1), W = indices.dim(2);
  Tensor out({B, num_classes, H, W});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        const double v = indices[(b * H + h) * W + w];
        if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(num_classes)) {
          throw Error("onehot: class id " + std::to_string(v) + " at [" + std::to_string(b) +
                      "," + std::to_string(h) + "," + std::to_string(w) +
                      "] is not in [0, " + std::to_string(num_classes) + ")");
        }
        out.at(b, static_cast<std::size_t>(v), h, w) = 1.0;
      }
    }
  }
  return out;
}

Tensor argmax_channels(const Tensor& scores) {
  require_rank4(scores, "argmax_channels");
  const auto B = scores.dim(0), L = scores.dim(1), H = scores.dim(2), W = scores.dim(3);
  Tensor out({B, H, W});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        std::size_t best = 0;
        double best_v = scores.at(b, 0, h, w);
        for (std::size_t l = 1; l < L; ++l) {
          const double v = scores.at(b, l, h, w);
          if (v > best_v) {
            best_v = v;
            best = l;
          }
        }
        out[(b * H + h) * W + w] = static_cast<double>(best);
      }
    }
  }
  return out;
}

}  // namespace ltseg
