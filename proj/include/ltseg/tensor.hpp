#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ltseg/alloc_counter.hpp"

namespace ltseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major tensor of 64-bit floats. The shape is fixed at
// construction; operations that change shape return new tensors.
//
// A default-constructed Tensor is the null tensor: rank 0, no storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::span<const double> values);
  Tensor(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_null() const noexcept { return shape_.empty(); }

  std::span<const double> data() const noexcept { return {data_.data(), data_.size()}; }
  std::span<double> data() noexcept { return {data_.data(), data_.size()}; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // [B,L,H,W] element access.
  double at(std::size_t b, std::size_t l, std::size_t h, std::size_t w) const {
    return data_[((b * shape_[1] + l) * shape_[2] + h) * shape_[3] + w];
  }
  double& at(std::size_t b, std::size_t l, std::size_t h, std::size_t w) {
    return data_[((b * shape_[1] + l) * shape_[2] + h) * shape_[3] + w];
  }

  std::size_t bytes() const noexcept { return data_.size() * sizeof(double); }

 private:
  Shape shape_;
  std::vector<double, CountingAllocator<double>> data_;
};

bool same_values(const Tensor& a, const Tensor& b);  // shape and bitwise data
double max_abs_diff(const Tensor& a, const Tensor& b);

// Channel-axis (axis 1) operations on [B,L,H,W] tensors. Both subtract the
// per-pixel channel maximum before exponentiating.
Tensor softmax_channels(const Tensor& logits);
Tensor log_softmax_channels(const Tensor& logits);

// indices: [B,H,W] of integral class ids in [0, num_classes).
Tensor onehot(const Tensor& indices, std::size_t num_classes);

// Per-pixel argmax over channels, ties resolved to the lowest id. Returns [B,H,W].
Tensor argmax_channels(const Tensor& scores);

// Throws if any entry is NaN or infinite, naming the flat index.
void require_finite(const Tensor& t, const char* what);

}  // namespace ltseg
