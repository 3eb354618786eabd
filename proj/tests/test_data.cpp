#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ltseg/data.hpp"
#include "ltseg/error.hpp"
#include "ltseg/losses.hpp"

using namespace ltseg;
namespace fs = std::filesystem;

namespace {

SynthConfig small(std::uint64_t seed = 3) {
  SynthConfig c;
  c.n_images = 40;
  c.height = 24;
  c.width = 24;
  c.seed = seed;
  return c;
}

std::vector<double> frequencies(const Dataset& ds) {
  std::vector<double> f(ds.num_classes, 0.0);
  for (double v : ds.masks.data()) f[static_cast<std::size_t>(v)] += 1;
  for (auto& x : f) x /= static_cast<double>(ds.masks.size());
  return f;
}

}  // namespace

TEST_CASE("target frequencies") {
  SynthConfig c;
  c.num_classes = 2;
  c.skew = 0;
  CHECK(c.target_frequencies() == std::vector<double>{0.5, 0.5});
  c.num_classes = 3;
  c.skew = 2;
  const auto t = c.target_frequencies();
  CHECK(t[0] == doctest::Approx(36.0 / 49));
  CHECK(t[2] == doctest::Approx(4.0 / 49));
  c.class_freqs = {9, 0.9, 0.1};
  CHECK(c.target_frequencies()[1] == doctest::Approx(0.09));
}

TEST_CASE("empirical frequencies follow the targets") {
  SUBCASE("long tail 0.90 / 0.09 / 0.01") {
    SynthConfig c;
    c.class_freqs = {0.90, 0.09, 0.01};
    const Dataset ds = generate(c);
    const auto f = frequencies(ds);
    CHECK(std::abs(f[0] / 0.90 - 1) <= 0.2);
    CHECK(std::abs(f[1] / 0.09 - 1) <= 0.2);
    CHECK(std::abs(f[2] / 0.01 - 1) <= 0.2);
  }
  SUBCASE("symmetric two-class") {
    SynthConfig c = small();
    c.num_classes = 2;
    c.skew = 0;
    const auto f = frequencies(generate(c));
    CHECK(std::abs(f[0] / 0.5 - 1) <= 0.2);
    CHECK(std::abs(f[1] / 0.5 - 1) <= 0.2);
  }
  SUBCASE("power-law skew gives strictly decreasing counts") {
    SynthConfig c = small();
    c.num_classes = 4;
    c.skew = 1.5;
    const auto t = c.target_frequencies();
    const auto f = frequencies(generate(c));
    for (std::size_t l = 0; l < 4; ++l) CHECK(std::abs(f[l] / t[l] - 1) <= 0.2);
    for (std::size_t l = 1; l < 4; ++l) CHECK(f[l] < f[l - 1]);
  }
}

TEST_CASE("generation is deterministic and valid") {
  const Dataset a = generate(small(5)), b = generate(small(5)), c = generate(small(6));
  CHECK(same_values(a.images, b.images));
  CHECK(same_values(a.masks, b.masks));
  CHECK_FALSE(same_values(a.images, c.images));
  for (double v : a.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const Tensor m = onehot(a.masks, a.num_classes);
  const Tensor sizes = mask_sizes(m);
  for (std::size_t i = 0; i < a.size(); ++i) {
    double s = 0;
    for (std::size_t l = 0; l < a.num_classes; ++l) s += sizes[i * a.num_classes + l];
    CHECK(s == 24.0 * 24.0);
  }
  // every class appears in every split
  for (auto split : {Split::Train, Split::Val, Split::Test}) {
    for (auto n : class_stats(a, split).counts) CHECK(n > 0);
  }
}

TEST_CASE("splits and class statistics") {
  const Dataset ds = generate(small());
  CHECK(ds.split_range(Split::Train) == std::pair<std::size_t, std::size_t>{0, 32});
  CHECK(ds.split_range(Split::Val) == std::pair<std::size_t, std::size_t>{32, 36});
  CHECK(ds.split_range(Split::Test) == std::pair<std::size_t, std::size_t>{36, 40});
  const ClassStats st = class_stats(ds, Split::Train);
  std::vector<std::int64_t> loop(ds.num_classes, 0);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 24 * 24; ++j) ++loop[static_cast<std::size_t>(ds.masks[i * 576 + j])];
  CHECK(st.counts == loop);
  CHECK(st.total == 32 * 576);

  const std::vector<std::size_t> idx{3, 1};
  const Tensor bi = ds.batch_images(idx);
  CHECK(bi.shape() == Shape{2, 3, 24, 24});
  CHECK(bi[0] == ds.images[3 * 3 * 576]);
  CHECK(ds.batch_masks(idx)[576] == ds.masks[576]);

  Dataset tiny;
  tiny.images = Tensor({1, 1, 2, 2});
  tiny.masks = Tensor({1, 2, 2});
  tiny.num_classes = 2;
  tiny.split_ratios = {1.0, 0.0, 0.0};
  CHECK(class_stats(tiny, Split::Train).counts == std::vector<std::int64_t>{4, 0});
  CHECK_THROWS_AS(class_stats(tiny, Split::Test), Error);
}

TEST_CASE("infeasible configurations are rejected") {
  SynthConfig c = small();
  c.height = 4;
  c.width = 4;
  c.class_freqs = {0.1, 0.1, 0.8};
  CHECK_THROWS_AS(c.validate(), Error);
  c = small();
  c.class_freqs = {1.0, 0.0, 0.0};
  CHECK_THROWS_AS(c.validate(), Error);
  c = small();
  c.num_classes = 1;
  CHECK_THROWS_AS(generate(c), Error);
}

TEST_CASE("save and load round trip") {
  const Dataset ds = generate(small(9));
  const fs::path dir = fs::path(LTSEG_TEST_TMP) / "ds";
  fs::remove_all(dir);
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  CHECK(same_values(back.images, ds.images));
  CHECK(same_values(back.masks, ds.masks));
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.seed == 9);
  CHECK(back.split_ratios == ds.split_ratios);

  SUBCASE("truncated images") {
    fs::resize_file(dir / "images.ptnsr", fs::file_size(dir / "images.ptnsr") - 8);
    CHECK_THROWS_AS(load_dataset(dir), Error);
  }
  SUBCASE("wrong magic") {
    std::fstream f(dir / "masks.ptnsr", std::ios::in | std::ios::out | std::ios::binary);
    f.put('Q');
    f.close();
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("PTNS"), Error);
  }
  SUBCASE("broken meta") {
    std::ofstream(dir / "meta.json") << "{ not json";
    CHECK_THROWS_AS(load_dataset(dir), Error);
  }
  CHECK_THROWS_AS(load_dataset(dir / "missing"), Error);
}
