#include "ltseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "ltseg/error.hpp"
#include "ltseg/ptnsr.hpp"

namespace ltseg {

namespace {

using json = nlohmann::json;

std::vector<double> base_colour(std::size_t cls, std::size_t num_classes, std::size_t channels,
                                double contrast) {
  std::vector<double> c(channels);
  if (channels == 1) {
    const double t = num_classes > 1 ? 2.0 * static_cast<double>(cls) /
                                               static_cast<double>(num_classes - 1) -
                                           1.0
                                     : 0.0;
    c[0] = 0.5 + contrast * t;
    return c;
  }
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(cls) /
                       static_cast<double>(num_classes);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    c[ch] = 0.5 + contrast * std::cos(angle + 2.0 * std::numbers::pi * static_cast<double>(ch) /
                                                  static_cast<double>(channels));
  }
  return c;
}

constexpr int kPlacementAttempts = 16;

struct Box {
  long h, w;
};

// Rectangle or ellipse bounding box with the requested area and aspect,
// shrunk along one axis if it would not fit.
Box fit_box(double area, double aspect, std::size_t H, std::size_t W, bool ellipse) {
  // an ellipse inscribed in an h x w box covers pi/4 of it
  const double box_area = ellipse ? area * 4.0 / std::numbers::pi : area;
  double h = std::sqrt(box_area * aspect);
  double w = box_area / h;
  if (h > static_cast<double>(H)) {
    h = static_cast<double>(H);
    w = box_area / h;
  }
  if (w > static_cast<double>(W)) {
    w = static_cast<double>(W);
    h = box_area / w;
  }
  return {std::max(1L, std::lround(h)), std::max(1L, std::lround(w))};
}

template <typename F>
void for_each_cell(Box box, bool ellipse, F&& f) {
  const double cy = static_cast<double>(box.h) / 2.0, cx = static_cast<double>(box.w) / 2.0;
  for (long y = 0; y < box.h; ++y) {
    for (long x = 0; x < box.w; ++x) {
      if (ellipse) {
        const double ny = (static_cast<double>(y) + 0.5 - cy) / cy;
        const double nx = (static_cast<double>(x) + 0.5 - cx) / cx;
        if (ny * ny + nx * nx > 1.0) continue;
      }
      f(y, x);
    }
  }
}

std::size_t mask_index(std::size_t n, std::size_t H, std::size_t W, long y, long x) {
  return (n * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(x);
}

}  // namespace

std::vector<double> SynthConfig::target_frequencies() const {
  std::vector<double> f(num_classes);
  if (!class_freqs.empty()) {
    if (class_freqs.size() != num_classes) {
      throw Error("synth config: " + std::to_string(class_freqs.size()) +
                  " class frequencies for " + std::to_string(num_classes) + " classes");
    }
    f = class_freqs;
  } else {
    for (std::size_t l = 0; l < num_classes; ++l) {
      f[l] = std::pow(static_cast<double>(l + 1), -skew);
    }
  }
  double sum = 0.0;
  for (double v : f) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error("synth config: class frequencies must be > 0");
    sum += v;
  }
  for (auto& v : f) v /= sum;
  return f;
}

void SynthConfig::validate() const {
  if (n_images == 0 || channels == 0 || height == 0 || width == 0) {
    throw Error("synth config: n_images, channels, height and width must be positive");
  }
  if (num_classes < 2 || num_classes > 255) throw Error("synth config: num_classes must be in [2, 255]");
  if (!(skew >= 0.0) || !std::isfinite(skew)) throw Error("synth config: skew must be >= 0");
  if (!(area_jitter_lo > 0.0 && area_jitter_lo <= area_jitter_hi)) {
    throw Error("synth config: area jitter range must satisfy 0 < lo <= hi");
  }
  if (!(noise_sigma >= 0.0) || !(contrast >= 0.0)) {
    throw Error("synth config: noise_sigma and contrast must be >= 0");
  }
  double rsum = 0.0;
  for (double r : split_ratios) {
    if (!(r >= 0.0)) throw Error("synth config: split ratios must be >= 0");
    rsum += r;
  }
  if (std::abs(rsum - 1.0) > 1e-9) throw Error("synth config: split ratios must sum to 1");

  const auto freqs = target_frequencies();
  const double px = static_cast<double>(height * width);
  for (std::size_t l = 1; l < num_classes; ++l) {
    const double largest = freqs[l] * px * area_jitter_hi;
    const double box_cap = shapes == ShapeKind::Rectangles ? px : px * std::numbers::pi / 4.0;
    if (largest > box_cap) {
      throw Error("synth config: infeasible size range, class " + std::to_string(l) +
                  " objects of up to " + std::to_string(largest) + " px do not fit a " +
                  std::to_string(height) + "x" + std::to_string(width) + " image");
    }
  }
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error("unknown split \"" + name + "\" (expected train, val or test)");
}

std::pair<std::size_t, std::size_t> Dataset::split_range(Split split) const {
  const auto N = static_cast<double>(size());
  const auto n_train = static_cast<std::size_t>(std::floor(N * split_ratios[0] + 0.5));
  const auto n_val = std::min(size() - n_train,
                              static_cast<std::size_t>(std::floor(N * split_ratios[1] + 0.5)));
  switch (split) {
    case Split::Train: return {0, n_train};
    case Split::Val: return {n_train, n_train + n_val};
    case Split::Test: return {n_train + n_val, size()};
  }
  return {0, 0};
}

std::vector<std::size_t> Dataset::split_indices(Split split) const {
  const auto [b, e] = split_range(split);
  std::vector<std::size_t> idx(e - b);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = b + i;
  return idx;
}

Tensor Dataset::batch_images(std::span<const std::size_t> indices) const {
  const std::size_t plane = channels() * height() * width();
  Tensor out({indices.size(), channels(), height(), width()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw Error("batch_images: index out of range");
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * plane), plane,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return out;
}

Tensor Dataset::batch_masks(std::span<const std::size_t> indices) const {
  const std::size_t plane = height() * width();
  Tensor out({indices.size(), height(), width()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw Error("batch_masks: index out of range");
    std::copy_n(masks.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * plane), plane,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return out;
}

Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto freqs = cfg.target_frequencies();
  const std::size_t N = cfg.n_images, C = cfg.channels, H = cfg.height, W = cfg.width,
                    L = cfg.num_classes;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);

  Dataset ds;
  ds.num_classes = L;
  ds.split_ratios = cfg.split_ratios;
  ds.seed = cfg.seed;
  ds.skew = cfg.skew;
  ds.class_freqs = freqs;
  ds.images = Tensor({N, C, H, W});
  ds.masks = Tensor({N, H, W});

  std::vector<std::vector<double>> colours(L);
  for (std::size_t l = 0; l < L; ++l) colours[l] = base_colour(l, L, C, cfg.contrast);

  const double px = static_cast<double>(H * W);
  for (std::size_t n = 0; n < N; ++n) {
    // head classes first so rarer objects are painted on top and never occluded
    for (std::size_t l = 1; l < L; ++l) {
      const double area =
          freqs[l] * px * (cfg.area_jitter_lo + (cfg.area_jitter_hi - cfg.area_jitter_lo) * unit(rng));
      const double aspect = std::exp((unit(rng) - 0.5) * std::log(4.0));  // in [1/2, 2]
      bool ellipse = cfg.shapes == ShapeKind::Ellipses;
      if (cfg.shapes == ShapeKind::Mixed) ellipse = unit(rng) < 0.5;
      const Box box = fit_box(area, aspect, H, W, ellipse);
      if (box.h > static_cast<long>(H) || box.w > static_cast<long>(W)) {
        throw Error("generate: class " + std::to_string(l) + " object larger than the image");
      }
      // keep the position that covers the fewest already painted object pixels,
      // so earlier classes keep close to their target area
      long top = 0, left = 0;
      std::size_t best = std::numeric_limits<std::size_t>::max();
      for (int attempt = 0; attempt < kPlacementAttempts && best > 0; ++attempt) {
        const long t = std::min(static_cast<long>(unit(rng) * static_cast<double>(H - box.h + 1)),
                                static_cast<long>(H) - box.h);
        const long lf = std::min(static_cast<long>(unit(rng) * static_cast<double>(W - box.w + 1)),
                                 static_cast<long>(W) - box.w);
        std::size_t overlap = 0;
        for_each_cell(box, ellipse, [&](long y, long x) {
          if (ds.masks[mask_index(n, H, W, t + y, lf + x)] != 0.0) ++overlap;
        });
        if (overlap < best) {
          best = overlap;
          top = t;
          left = lf;
        }
      }
      for_each_cell(box, ellipse, [&](long y, long x) {
        ds.masks[mask_index(n, H, W, top + y, left + x)] = static_cast<double>(l);
      });
    }
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const auto cls = static_cast<std::size_t>(ds.masks[(n * H + y) * W + x]);
        for (std::size_t c = 0; c < C; ++c) {
          double v = colours[cls][c];
          if (cfg.noise_sigma > 0.0) v += noise(rng);
          ds.images[((n * C + c) * H + y) * W + x] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return ds;
}

ClassStats class_stats(const Dataset& dataset, Split split) {
  const auto [b, e] = dataset.split_range(split);
  if (b == e) throw Error("class_stats: split \"" + to_string(split) + "\" is empty");
  std::vector<std::int64_t> counts(dataset.num_classes, 0);
  const std::size_t plane = dataset.height() * dataset.width();
  for (std::size_t i = b * plane; i < e * plane; ++i) {
    counts[static_cast<std::size_t>(dataset.masks[i])] += 1;
  }
  return ClassStats::from_counts(std::move(counts));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ptnsr::save(dataset.images, dir / "images.ptnsr", ptnsr::DType::F64);
  ptnsr::save(dataset.masks, dir / "masks.ptnsr", ptnsr::DType::U8);
  json meta = {
      {"format", "ltseg-dataset"},
      {"n", dataset.size()},
      {"C", dataset.channels()},
      {"H", dataset.height()},
      {"W", dataset.width()},
      {"L", dataset.num_classes},
      {"splits", dataset.split_ratios},
      {"seed", dataset.seed},
      {"skew", dataset.skew},
      {"class_freqs", dataset.class_freqs},
  };
  std::ofstream f(dir / "meta.json", std::ios::trunc);
  if (!f) throw Error("save_dataset: cannot write " + (dir / "meta.json").string());
  f << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error("dataset directory " + dir.string() + " does not exist");
  }
  std::ifstream f(dir / "meta.json");
  if (!f) throw Error("load_dataset: missing " + (dir / "meta.json").string());
  json meta;
  try {
    f >> meta;
  } catch (const json::exception& e) {
    throw Error("load_dataset: malformed meta.json: " + std::string(e.what()));
  }
  Dataset ds;
  std::size_t n = 0, C = 0, H = 0, W = 0;
  try {
    n = meta.at("n").get<std::size_t>();
    C = meta.at("C").get<std::size_t>();
    H = meta.at("H").get<std::size_t>();
    W = meta.at("W").get<std::size_t>();
    ds.num_classes = meta.at("L").get<std::size_t>();
    ds.split_ratios = meta.at("splits").get<std::array<double, 3>>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.skew = meta.at("skew").get<double>();
    ds.class_freqs = meta.value("class_freqs", std::vector<double>{});
  } catch (const json::exception& e) {
    throw Error("load_dataset: meta.json: " + std::string(e.what()));
  }
  Tensor images = ptnsr::load(dir / "images.ptnsr");
  Tensor masks = ptnsr::load(dir / "masks.ptnsr");
  if (images.shape() != Shape{n, C, H, W}) {
    throw Error("load_dataset: images.ptnsr has shape " + shape_to_string(images.shape()) +
                ", meta.json says " + shape_to_string({n, C, H, W}));
  }
  if (masks.shape() != Shape{n, H, W}) {
    throw Error("load_dataset: masks.ptnsr has shape " + shape_to_string(masks.shape()) +
                ", meta.json says " + shape_to_string({n, H, W}));
  }
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i] >= static_cast<double>(ds.num_classes)) {
      throw Error("load_dataset: class id " + std::to_string(masks[i]) + " at mask index " +
                  std::to_string(i) + " is not below L=" + std::to_string(ds.num_classes));
    }
  }
  ds.images = std::move(images);
  ds.masks = std::move(masks);
  return ds;
}

}  // namespace ltseg
