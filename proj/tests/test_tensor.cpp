#include <doctest.h>

#include <cmath>
#include <limits>

#include "ltseg/alloc_counter.hpp"
#include "ltseg/error.hpp"
#include "ltseg/tensor.hpp"

using namespace ltseg;

TEST_CASE("construction and element access") {
  Tensor t({2, 3, 1, 2}, 1.5);
  CHECK(t.size() == 12);
  CHECK(t.rank() == 4);
  CHECK(t.bytes() == 96);
  CHECK(t[7] == 1.5);
  t.at(1, 2, 0, 1) = -4.0;
  CHECK(t[11] == -4.0);
  CHECK(Tensor().is_null());
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), Error);
  CHECK(shape_to_string({2, 3}) == "[2,3]");
}

TEST_CASE("softmax matches reference values") {
  // mpmath, 30 digits
  const Tensor z({1, 3, 1, 1}, {1.0, 2.0, 3.0});
  const Tensor p = softmax_channels(z);
  CHECK(p[0] == doctest::Approx(0.090030573170380457998).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.24472847105479765247).epsilon(1e-15));
  CHECK(p[2] == doctest::Approx(0.66524095577482188953).epsilon(1e-15));

  const Tensor lp = log_softmax_channels(Tensor({1, 2, 1, 1}, {3.0, -1.0}));
  CHECK(lp[0] == doctest::Approx(-0.018149927917809740355).epsilon(1e-14));
  CHECK(lp[1] == doctest::Approx(-4.0181499279178097404).epsilon(1e-15));
}

TEST_CASE("softmax is shift invariant and stable for large logits") {
  Tensor z({2, 4, 3, 3});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::sin(0.7 * static_cast<double>(i)) * 5.0;
  Tensor shifted = z;
  for (auto& v : shifted.data()) v += 800.0;
  const Tensor a = softmax_channels(z), b = softmax_channels(shifted);
  CHECK(max_abs_diff(a, b) < 1e-12);
  for (std::size_t bi = 0; bi < 2; ++bi) {
    for (std::size_t h = 0; h < 3; ++h) {
      for (std::size_t w = 0; w < 3; ++w) {
        double s = 0.0;
        for (std::size_t l = 0; l < 4; ++l) s += a.at(bi, l, h, w);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
      }
    }
  }
  const Tensor lp = log_softmax_channels(shifted);
  for (std::size_t i = 0; i < lp.size(); ++i) CHECK(std::exp(lp[i]) == doctest::Approx(a[i]).epsilon(1e-12));
}

TEST_CASE("non-finite logits are rejected with their index") {
  Tensor z({1, 2, 1, 2});
  z[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(softmax_channels(z), doctest::Contains("[0,1,0,1]"), Error);
  z[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(log_softmax_channels(z), Error);
  CHECK_THROWS_AS(softmax_channels(Tensor({2, 2})), Error);
}

TEST_CASE("onehot and argmax") {
  const Tensor ids({1, 2, 2}, {0, 2, 1, 2});
  const Tensor m = onehot(ids, 3);
  CHECK(m.shape() == Shape{1, 3, 2, 2});
  CHECK(m.at(0, 0, 0, 0) == 1.0);
  CHECK(m.at(0, 2, 0, 1) == 1.0);
  CHECK(m.at(0, 1, 1, 0) == 1.0);
  CHECK(m.at(0, 1, 1, 1) == 0.0);
  CHECK(same_values(argmax_channels(m), ids));
  CHECK_THROWS_AS(onehot(Tensor({1, 1, 1}, {3.0}), 3), Error);
  CHECK_THROWS_AS(onehot(Tensor({1, 1, 1}, {0.5}), 3), Error);

  // ties go to the lowest id
  const Tensor tied({1, 3, 1, 1}, {2.0, 5.0, 5.0});
  CHECK(argmax_channels(tied)[0] == 1.0);
}

TEST_CASE("same_values is bitwise") {
  const Tensor a({2}, {0.0, 1.0});
  const Tensor b({2}, {-0.0, 1.0});
  CHECK_FALSE(same_values(a, b));
  CHECK(same_values(a, Tensor({2}, {0.0, 1.0})));
  CHECK_FALSE(same_values(a, Tensor({1, 2}, {0.0, 1.0})));
}

TEST_CASE("allocation counter tracks tensor storage") {
  AllocCounter::reset();
  const auto before = AllocCounter::snapshot();
  {
    Tensor t({10, 10});
    const auto during = AllocCounter::snapshot();
    CHECK(during.live_bytes - before.live_bytes == 800);
    CHECK(during.temp_tensor_count == 1);
  }
  const auto after = AllocCounter::snapshot();
  CHECK(after.live_bytes == before.live_bytes);
  CHECK(after.peak_bytes - before.live_bytes == 800);
}
