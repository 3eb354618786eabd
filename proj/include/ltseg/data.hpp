#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ltseg/losses.hpp"
#include "ltseg/tensor.hpp"

namespace ltseg {

enum class ShapeKind { Rectangles, Ellipses, Mixed };

struct SynthConfig {
  std::size_t n_images = 200;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 3;

  // Target pixel frequency of class l is proportional to (l + 1)^-skew.
  // Class 0 is the background / head class.
  double skew = 2.0;
  // Explicit targets; when non-empty they override skew and are normalized.
  std::vector<double> class_freqs;

  ShapeKind shapes = ShapeKind::Mixed;
  // Each object's area is the class's per-image target area times a factor
  // drawn uniformly from this range.
  double area_jitter_lo = 0.6;
  double area_jitter_hi = 1.4;

  // Distance of the per-class base colours from mid-grey, and the
  // per-pixel Gaussian noise added on top.
  double contrast = 0.08;
  double noise_sigma = 0.1;

  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  std::vector<double> target_frequencies() const;
  void validate() const;
};

enum class Split { Train, Val, Test };

std::string to_string(Split split);
Split parse_split(const std::string& name);

struct Dataset {
  Tensor images;  // [N,C,H,W] in [0,1]
  Tensor masks;   // [N,H,W] class ids
  std::size_t num_classes = 0;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  double skew = 0.0;
  std::vector<double> class_freqs;  // generation targets

  std::size_t size() const { return images.is_null() ? 0 : images.dim(0); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }

  // Contiguous [begin, end) image range of a split.
  std::pair<std::size_t, std::size_t> split_range(Split split) const;
  std::vector<std::size_t> split_indices(Split split) const;

  Tensor batch_images(std::span<const std::size_t> indices) const;  // [b,C,H,W]
  Tensor batch_masks(std::span<const std::size_t> indices) const;   // [b,H,W]
};

Dataset generate(const SynthConfig& cfg);

ClassStats class_stats(const Dataset& dataset, Split split);

// Directory layout: images.ptnsr (f64), masks.ptnsr (u8), meta.json.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ltseg
