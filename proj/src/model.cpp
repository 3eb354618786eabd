#include "ltseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ltseg/error.hpp"
#include "ltseg/ptnsr.hpp"

namespace ltseg {

namespace {

constexpr std::size_t kK = 3;

struct Range {
  std::size_t lo, hi;
};

// Output positions whose input position pos + d lies inside [0, n).
Range valid_range(std::size_t n, int d) {
  const auto sn = static_cast<long>(n);
  const long lo = std::max(0L, -static_cast<long>(d));
  const long hi = std::min(sn, sn - d);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void check_layer(const Conv2D& layer, std::size_t index) {
  const auto& ws = layer.weight.shape();
  if (ws.size() != 4 || ws[2] != kK || ws[3] != kK) {
    throw Error("layer " + std::to_string(index) + ": weight must be [out,in,3,3], got " +
                shape_to_string(ws));
  }
  if (layer.bias.shape() != Shape{ws[0]}) {
    throw Error("layer " + std::to_string(index) + ": bias must be [" + std::to_string(ws[0]) +
                "], got " + shape_to_string(layer.bias.shape()));
  }
}

std::string layer_file(std::size_t k, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "layer_%03zu_%s.ptnsr", k, what);
  return buf;
}

}  // namespace

ConvNet::ConvNet(std::vector<Conv2D> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw Error("ConvNet: at least one layer required");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    check_layer(layers_[k], k);
    if (k > 0 && layers_[k].in_channels() != layers_[k - 1].out_channels()) {
      throw Error("ConvNet: layer " + std::to_string(k) + " expects " +
                  std::to_string(layers_[k].in_channels()) + " input channels, previous layer has " +
                  std::to_string(layers_[k - 1].out_channels()));
    }
  }
}

ConvNet ConvNet::create(const std::vector<std::size_t>& channel_plan, std::uint64_t seed) {
  if (channel_plan.size() < 2) throw Error("ConvNet: channel plan needs at least {C, L}");
  std::mt19937_64 rng(seed);
  std::vector<Conv2D> layers;
  for (std::size_t k = 0; k + 1 < channel_plan.size(); ++k) {
    const std::size_t in = channel_plan[k], out = channel_plan[k + 1];
    if (in == 0 || out == 0) throw Error("ConvNet: zero channels in plan");
    Conv2D layer{Tensor({out, in, kK, kK}), Tensor({out})};
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(in * kK * kK)));
    for (auto& w : layer.weight.data()) w = he(rng);
    layers.push_back(std::move(layer));
  }
  return ConvNet(std::move(layers));
}

std::vector<std::size_t> ConvNet::channel_plan() const {
  std::vector<std::size_t> plan{in_channels()};
  for (const auto& l : layers_) plan.push_back(l.out_channels());
  return plan;
}

std::size_t ConvNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

Tensor conv2d_forward(const Conv2D& layer, const Tensor& input) {
  if (input.rank() != 4 || input.dim(1) != layer.in_channels()) {
    throw Error("conv2d: input " + shape_to_string(input.shape()) + " does not have " +
                std::to_string(layer.in_channels()) + " channels");
  }
  const std::size_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = layer.out_channels();
  Tensor out({B, Co, H, W});
  const double* in = input.data().data();
  const double* wt = layer.weight.data().data();
  double* o = out.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      double* oplane = o + (b * Co + co) * H * W;
      std::fill(oplane, oplane + H * W, layer.bias[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* iplane = in + (b * Ci + ci) * H * W;
        for (std::size_t ky = 0; ky < kK; ++ky) {
          const int dy = static_cast<int>(ky) - 1;
          const Range ry = valid_range(H, dy);
          for (std::size_t kx = 0; kx < kK; ++kx) {
            const int dx = static_cast<int>(kx) - 1;
            const Range rx = valid_range(W, dx);
            const double w = wt[((co * Ci + ci) * kK + ky) * kK + kx];
            for (std::size_t y = ry.lo; y < ry.hi; ++y) {
              double* orow = oplane + y * W;
              const double* irow = iplane + (y + dy) * W;
              for (std::size_t x = rx.lo; x < rx.hi; ++x) orow[x] += w * irow[x + dx];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_backward(const Conv2D& layer, const Tensor& input, const Tensor& grad_output,
                       Tensor& grad_weight, Tensor& grad_bias) {
  const std::size_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = layer.out_channels();
  if (grad_output.shape() != Shape{B, Co, H, W}) {
    throw Error("conv2d backward: gradient shape " + shape_to_string(grad_output.shape()) +
                " does not match layer output");
  }
  grad_weight = Tensor(layer.weight.shape());
  grad_bias = Tensor(layer.bias.shape());
  Tensor grad_input(input.shape());
  const double* in = input.data().data();
  const double* go = grad_output.data().data();
  const double* wt = layer.weight.data().data();
  double* gw = grad_weight.data().data();
  double* gi = grad_input.data().data();

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      const double* gplane = go + (b * Co + co) * H * W;
      double bsum = 0.0;
      for (std::size_t j = 0; j < H * W; ++j) bsum += gplane[j];
      grad_bias[co] += bsum;
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* iplane = in + (b * Ci + ci) * H * W;
        double* giplane = gi + (b * Ci + ci) * H * W;
        for (std::size_t ky = 0; ky < kK; ++ky) {
          const int dy = static_cast<int>(ky) - 1;
          const Range ry = valid_range(H, dy);
          for (std::size_t kx = 0; kx < kK; ++kx) {
            const int dx = static_cast<int>(kx) - 1;
            const Range rx = valid_range(W, dx);
            const std::size_t widx = ((co * Ci + ci) * kK + ky) * kK + kx;
            const double w = wt[widx];
            double acc = 0.0;
            for (std::size_t y = ry.lo; y < ry.hi; ++y) {
              const double* grow = gplane + y * W;
              const double* irow = iplane + (y + dy) * W;
              double* girow = giplane + (y + dy) * W;
              for (std::size_t x = rx.lo; x < rx.hi; ++x) {
                acc += grow[x] * irow[x + dx];
                girow[x + dx] += w * grow[x];
              }
            }
            gw[widx] += acc;
          }
        }
      }
    }
  }
  return grad_input;
}

ForwardResult forward(const ConvNet& net, const Tensor& images) {
  if (images.rank() != 4) {
    throw Error("forward: images must be [B,C,H,W], got " + shape_to_string(images.shape()));
  }
  if (images.dim(1) != net.in_channels()) {
    throw Error("forward: images have " + std::to_string(images.dim(1)) +
                " channels, network expects " + std::to_string(net.in_channels()));
  }
  ForwardResult r;
  r.cache.net = &net;
  r.cache.generation = net.generation();
  Tensor x = images;
  const auto& layers = net.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    Tensor z = conv2d_forward(layers[k], x);
    r.cache.layer_inputs.push_back(std::move(x));
    if (k + 1 < layers.size()) {
      for (auto& v : z.data()) v = v > 0.0 ? v : 0.0;
    }
    x = std::move(z);
  }
  require_finite(x, "forward: logits");
  r.logits = std::move(x);
  return r;
}

Tensor infer(const ConvNet& net, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != net.in_channels()) {
    throw Error("infer: images " + shape_to_string(images.shape()) + " do not match network with " +
                std::to_string(net.in_channels()) + " input channels");
  }
  const auto& layers = net.layers();
  Tensor x = conv2d_forward(layers[0], images);
  for (std::size_t k = 1; k < layers.size(); ++k) {
    for (auto& v : x.data()) v = v > 0.0 ? v : 0.0;
    x = conv2d_forward(layers[k], x);
  }
  return x;
}

Gradients backward(const ConvNet& net, const ForwardCache& cache, const Tensor& grad_logits) {
  if (cache.net != &net || cache.generation != net.generation()) {
    throw Error("backward: stale cache (network changed since forward)");
  }
  const auto& layers = net.layers();
  if (cache.layer_inputs.size() != layers.size()) throw Error("backward: malformed cache");
  Gradients g;
  g.weight.resize(layers.size());
  g.bias.resize(layers.size());
  Tensor grad = grad_logits;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const Tensor& input = cache.layer_inputs[k];
    Tensor grad_input = conv2d_backward(layers[k], input, grad, g.weight[k], g.bias[k]);
    if (k > 0) {
      // ReLU: input is the post-activation of layer k-1
      for (std::size_t i = 0; i < grad_input.size(); ++i) {
        if (!(input[i] > 0.0)) grad_input[i] = 0.0;
      }
    }
    grad = std::move(grad_input);
  }
  return g;
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::SGD ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::SGD;
  if (name == "adam") return OptimizerKind::Adam;
  throw Error("unknown optimizer \"" + name + "\" (expected sgd or adam)");
}

Optimizer::Optimizer(OptimizerConfig config, const ConvNet& net) : config_(config) {
  if (!(config_.lr >= 0.0)) throw Error("optimizer: lr must be >= 0");
  for (const auto& l : net.layers()) {
    m_.emplace_back(l.weight.shape());
    m_.emplace_back(l.bias.shape());
    v_.emplace_back(l.weight.shape());
    v_.emplace_back(l.bias.shape());
  }
}

void Optimizer::step(ConvNet& net, const Gradients& grads) {
  const auto& cur = net.layers();
  if (grads.weight.size() != cur.size() || grads.bias.size() != cur.size() ||
      m_.size() != 2 * cur.size()) {
    throw Error("optimizer: gradient layer count does not match network");
  }
  for (std::size_t k = 0; k < cur.size(); ++k) {
    if (grads.weight[k].shape() != cur[k].weight.shape() ||
        grads.bias[k].shape() != cur[k].bias.shape()) {
      throw Error("optimizer: gradient shape mismatch at layer " + std::to_string(k));
    }
    for (const Tensor* g : {&grads.weight[k], &grads.bias[k]}) {
      for (double v : g->data()) {
        if (!std::isfinite(v)) {
          throw Error("optimizer: non-finite gradient in layer " + std::to_string(k) +
                      (g == &grads.weight[k] ? " weight" : " bias"));
        }
      }
    }
  }

  ++t_;
  auto& layers = net.mutable_layers();
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < layers.size(); ++k) {
    Tensor* params[2] = {&layers[k].weight, &layers[k].bias};
    const Tensor* gs[2] = {&grads.weight[k], &grads.bias[k]};
    for (int p = 0; p < 2; ++p) {
      auto w = params[p]->data();
      auto g = gs[p]->data();
      auto m = m_[2 * k + p].data();
      auto v = v_[2 * k + p].data();
      if (c.kind == OptimizerKind::SGD) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = c.momentum * m[i] + g[i];
          w[i] -= c.lr * m[i];
        }
      } else {
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
          v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
      }
    }
  }
}

void save_checkpoint(const ConvNet& net, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw Error("checkpoint: cannot write " + (dir / "manifest.txt").string());
  manifest << "layers " << net.layers().size() << "\n";
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    const auto& l = net.layers()[k];
    ptnsr::save(l.weight, dir / layer_file(k, "weight"));
    ptnsr::save(l.bias, dir / layer_file(k, "bias"));
    manifest << "layer " << k << " weight " << shape_to_string(l.weight.shape()) << " bias "
             << shape_to_string(l.bias.shape()) << "\n";
  }
}

ConvNet load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw Error("checkpoint: missing " + (dir / "manifest.txt").string());
  std::string word;
  std::size_t count = 0;
  if (!(manifest >> word >> count) || word != "layers" || count == 0) {
    throw Error("checkpoint: malformed manifest in " + dir.string());
  }
  std::vector<Conv2D> layers;
  std::string line;
  std::getline(manifest, line);
  for (std::size_t k = 0; k < count; ++k) {
    if (!std::getline(manifest, line)) throw Error("checkpoint: manifest lists too few layers");
    Conv2D layer{ptnsr::load(dir / layer_file(k, "weight")),
                 ptnsr::load(dir / layer_file(k, "bias"))};
    std::ostringstream expect;
    expect << "layer " << k << " weight " << shape_to_string(layer.weight.shape()) << " bias "
           << shape_to_string(layer.bias.shape());
    if (line != expect.str()) {
      throw Error("checkpoint: manifest entry \"" + line + "\" does not match stored tensors");
    }
    layers.push_back(std::move(layer));
  }
  return ConvNet(std::move(layers));
}

}  // namespace ltseg
