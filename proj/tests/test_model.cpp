#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ltseg/error.hpp"
#include "ltseg/losses.hpp"
#include "ltseg/model.hpp"
#include "ltseg/ptnsr.hpp"

using namespace ltseg;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sd);
  Tensor t(shape);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Six nested loops over the definition of a padded 3x3 correlation.
Tensor naive_conv(const Conv2D& layer, const Tensor& x) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = layer.out_channels();
  Tensor y({B, O, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          double s = layer.bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const long yy = static_cast<long>(h) + dy, xx = static_cast<long>(w) + dx;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += layer.weight[((o * C + c) * 3 + static_cast<std::size_t>(dy + 1)) * 3 +
                                  static_cast<std::size_t>(dx + 1)] *
                     x.at(b, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
              }
          y.at(b, o, h, w) = s;
        }
  return y;
}

double loss_of(const ConvNet& net, const Tensor& x, const Tensor& mask, const LossSpec& spec) {
  return compute_loss(spec, infer(net, x), mask, ClassStats::from_counts({3, 2, 1}), 5).value;
}

}  // namespace

TEST_CASE("conv2d forward matches the naive definition") {
  for (std::size_t H : {1u, 2u, 5u}) {
    Conv2D layer{random_tensor({4, 3, 3, 3}, 1), random_tensor({4}, 2)};
    const Tensor x = random_tensor({2, 3, H, H + 1}, 3);
    CHECK(max_abs_diff(conv2d_forward(layer, x), naive_conv(layer, x)) < 1e-12);
  }
}

TEST_CASE("conv2d backward matches finite differences") {
  Conv2D layer{random_tensor({2, 2, 3, 3}, 4), random_tensor({2}, 5)};
  const Tensor x = random_tensor({1, 2, 3, 4}, 6);
  const Tensor gy = random_tensor({1, 2, 3, 4}, 7);
  Tensor gw({2, 2, 3, 3}), gb({2});
  const Tensor gx = conv2d_backward(layer, x, gy, gw, gb);
  const auto objective = [&](const Conv2D& l, const Tensor& in) {
    const Tensor y = conv2d_forward(l, in);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * gy[i];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor up = x, down = x;
    up[i] += h;
    down[i] -= h;
    CHECK(gx[i] == doctest::Approx((objective(layer, up) - objective(layer, down)) / (2 * h)).epsilon(1e-7));
  }
  for (std::size_t i = 0; i < layer.weight.size(); ++i) {
    Conv2D up = layer, down = layer;
    up.weight[i] += h;
    down.weight[i] -= h;
    CHECK(gw[i] == doctest::Approx((objective(up, x) - objective(down, x)) / (2 * h)).epsilon(1e-7));
  }
  CHECK(gb[0] == doctest::Approx(objective(Conv2D{layer.weight, Tensor({2}, {1, 0})}, x) -
                                 objective(Conv2D{layer.weight, Tensor({2}, {0, 0})}, x)).epsilon(1e-9));
}

TEST_CASE("single-parameter perturbation on a 1x1x2x2 input") {
  ConvNet net = ConvNet::create({1, 3}, 9);
  const Tensor x({1, 1, 2, 2}, {0.1, -0.4, 0.7, 0.2});
  const Tensor mask = onehot(Tensor({1, 2, 2}, {0, 2, 1, 0}), 3);
  const LossSpec spec = LossSpec::defaults(LossKind::CE);
  const ForwardResult f = forward(net, x);
  const Gradients g = backward(net, f.cache, compute_loss(spec, f.logits, mask, std::nullopt, 0).grad_logits);
  const double h = 1e-5;
  const double w0 = net.layers()[0].weight[4];
  net.mutable_layers()[0].weight[4] = w0 + h;
  const double up = loss_of(net, x, mask, spec);
  net.mutable_layers()[0].weight[4] = w0 - h;
  const double down = loss_of(net, x, mask, spec);
  CHECK(g.weight[0][4] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4));
}

TEST_CASE("end-to-end parameter gradients for every loss kind") {
  const Tensor x = random_tensor({1, 1, 4, 4}, 10);
  Tensor ids({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) ids[i] = static_cast<double>((i * 7) % 3);
  const Tensor mask = onehot(ids, 3);
  for (auto k : kAllLossKinds) {
    ConvNet net = ConvNet::create({1, 4, 3}, 11);
    LossSpec spec = LossSpec::defaults(k);
    if (k == LossKind::LDAM) spec.scale_s = 2.0;
    if (k == LossKind::PAT) spec.temperature = 2.0;
    const ForwardResult f = forward(net, x);
    const Gradients g = backward(
        net, f.cache,
        compute_loss(spec, f.logits, mask, ClassStats::from_counts({3, 2, 1}), 5).grad_logits);
    // stop-gradient PAT is compared with its coefficients frozen at the unperturbed logits
    const Tensor beta0 = pat_beta(softmax_channels(f.logits), spec.temperature, spec.epsilon, spec.variant);
    const auto value = [&] {
      if (k == LossKind::PAT) return pat_fixed_beta(infer(net, x), mask, beta0, spec).value;
      return loss_of(net, x, mask, spec);
    };
    std::size_t checked = 0, bad = 0;
    for (std::size_t layer = 0; layer < 2; ++layer) {
      for (std::size_t i = 0; i < net.layers()[layer].weight.size(); i += 3) {
        const double w0 = net.layers()[layer].weight[i];
        const double h = 1e-5;
        net.mutable_layers()[layer].weight[i] = w0 + h;
        const double up = value();
        net.mutable_layers()[layer].weight[i] = w0 - h;
        const double down = value();
        net.mutable_layers()[layer].weight[i] = w0;
        const double fd = (up - down) / (2 * h);
        const double a = g.weight[layer][i];
        const double diff = std::abs(a - fd);
        ++checked;
        if (diff > 1e-8 && diff / std::max(std::abs(a), std::abs(fd)) > 1e-3) ++bad;
      }
    }
    CHECK_MESSAGE(bad == 0, to_string(k));
    CHECK(checked > 0);
  }
}

TEST_CASE("end-to-end pat with differentiated coefficients") {
  const Tensor x = random_tensor({1, 1, 4, 4}, 12);
  Tensor ids({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) ids[i] = static_cast<double>((i * 5) % 3);
  const Tensor mask = onehot(ids, 3);
  ConvNet net = ConvNet::create({1, 4, 3}, 13);
  LossSpec spec = LossSpec::defaults(LossKind::PAT);
  spec.temperature = 2.0;
  spec.differentiate_beta = true;
  const ForwardResult f = forward(net, x);
  const Gradients g = backward(net, f.cache, compute_loss(spec, f.logits, mask, std::nullopt, 0).grad_logits);
  for (std::size_t i = 0; i < net.layers()[1].weight.size(); i += 5) {
    const double w0 = net.layers()[1].weight[i];
    net.mutable_layers()[1].weight[i] = w0 + 1e-5;
    const double up = loss_of(net, x, mask, spec);
    net.mutable_layers()[1].weight[i] = w0 - 1e-5;
    const double down = loss_of(net, x, mask, spec);
    net.mutable_layers()[1].weight[i] = w0;
    const double fd = (up - down) / 2e-5;
    if (std::abs(fd - g.weight[1][i]) > 1e-8) CHECK(g.weight[1][i] == doctest::Approx(fd).epsilon(1e-3));
  }
}

TEST_CASE("stale caches are rejected") {
  ConvNet net = ConvNet::create({2, 3, 2}, 1);
  const ForwardResult f = forward(net, random_tensor({1, 2, 3, 3}, 2));
  net.mutable_layers();
  CHECK_THROWS_WITH_AS(backward(net, f.cache, Tensor({1, 2, 3, 3})), doctest::Contains("stale"), Error);
}

TEST_CASE("optimizers") {
  ConvNet net(std::vector<Conv2D>{{Tensor({1, 1, 3, 3}, 1.0), Tensor({1}, 0.5)}});
  Gradients g{{Tensor({1, 1, 3, 3}, 2.0)}, {Tensor({1}, -4.0)}};

  SUBCASE("adam first step moves each parameter by lr against the gradient sign") {
    OptimizerConfig cfg;
    cfg.lr = 0.01;
    Optimizer opt(cfg, net);
    opt.step(net, g);
    // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    CHECK(net.layers()[0].weight[0] == doctest::Approx(1.0 - 0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
    CHECK(net.layers()[0].bias[0] == doctest::Approx(0.5 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-15));
    CHECK(opt.steps_taken() == 1);
  }
  SUBCASE("sgd with momentum") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::SGD;
    cfg.lr = 0.1;
    cfg.momentum = 0.5;
    Optimizer opt(cfg, net);
    opt.step(net, g);
    CHECK(net.layers()[0].weight[0] == doctest::Approx(1.0 - 0.2));
    opt.step(net, g);
    // v = 0.5 * 2 + 2 = 3
    CHECK(net.layers()[0].weight[0] == doctest::Approx(0.8 - 0.3));
  }
  SUBCASE("non-finite gradients leave parameters untouched") {
    Optimizer opt(OptimizerConfig{}, net);
    g.bias[0][0] = std::nan("");
    CHECK_THROWS_WITH_AS(opt.step(net, g), doctest::Contains("bias"), Error);
    CHECK(net.layers()[0].weight[0] == 1.0);
  }
}

TEST_CASE("initialization") {
  const ConvNet a = ConvNet::create({3, 16, 16, 3}, 7), b = ConvNet::create({3, 16, 16, 3}, 7);
  CHECK(a.channel_plan() == std::vector<std::size_t>{3, 16, 16, 3});
  CHECK(a.parameter_count() == (16 * 27 + 16) + (16 * 144 + 16) + (3 * 144 + 3));
  for (std::size_t l = 0; l < 3; ++l) CHECK(same_values(a.layers()[l].weight, b.layers()[l].weight));
  double sq = 0;
  for (double v : a.layers()[1].weight.data()) sq += v * v;
  // He normal: variance 2 / fan_in
  CHECK(sq / static_cast<double>(a.layers()[1].weight.size()) == doctest::Approx(2.0 / 144).epsilon(0.15));
  for (double v : a.layers()[0].bias.data()) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round trip") {
  const ConvNet net = ConvNet::create({3, 5, 2}, 3);
  const fs::path dir = fs::path(LTSEG_TEST_TMP) / "ckpt";
  fs::remove_all(dir);
  save_checkpoint(net, dir);
  CHECK(fs::exists(dir / "manifest.txt"));
  CHECK(fs::exists(dir / "layer_000_weight.ptnsr"));
  const ConvNet back = load_checkpoint(dir);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(same_values(back.layers()[l].weight, net.layers()[l].weight));
    CHECK(same_values(back.layers()[l].bias, net.layers()[l].bias));
  }
  ptnsr::save(Tensor({5, 3, 3, 1}), dir / "layer_000_weight.ptnsr");
  CHECK_THROWS_AS(load_checkpoint(dir), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "nope"), Error);
}
