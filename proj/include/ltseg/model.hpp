#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ltseg/tensor.hpp"

namespace ltseg {

// 3x3, stride 1, zero "same" padding.
struct Conv2D {
  Tensor weight;  // [out, in, 3, 3]
  Tensor bias;    // [out]

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
};

// Stack of Conv2D layers, ReLU after every layer but the last. Produces
// per-pixel class logits at the input resolution.
class ConvNet {
 public:
  ConvNet() = default;
  explicit ConvNet(std::vector<Conv2D> layers);

  // channel_plan = {C, hidden..., L}; He-normal weights from seed, zero biases.
  static ConvNet create(const std::vector<std::size_t>& channel_plan, std::uint64_t seed);

  const std::vector<Conv2D>& layers() const { return layers_; }
  std::vector<Conv2D>& mutable_layers() {
    ++generation_;
    return layers_;
  }

  std::size_t in_channels() const { return layers_.front().in_channels(); }
  std::size_t out_channels() const { return layers_.back().out_channels(); }
  std::vector<std::size_t> channel_plan() const;
  std::size_t parameter_count() const;

  // Incremented whenever parameters may have changed; caches are tied to it.
  std::uint64_t generation() const { return generation_; }

 private:
  std::vector<Conv2D> layers_;
  std::uint64_t generation_ = 0;
};

struct ForwardCache {
  const ConvNet* net = nullptr;
  std::uint64_t generation = 0;
  std::vector<Tensor> layer_inputs;  // input of each layer; [k>0] are post-ReLU
};

struct Gradients {
  std::vector<Tensor> weight;
  std::vector<Tensor> bias;
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

ForwardResult forward(const ConvNet& net, const Tensor& images);
Tensor infer(const ConvNet& net, const Tensor& images);
Gradients backward(const ConvNet& net, const ForwardCache& cache, const Tensor& grad_logits);

// Single-layer primitives, exposed for testing.
Tensor conv2d_forward(const Conv2D& layer, const Tensor& input);
Tensor conv2d_backward(const Conv2D& layer, const Tensor& input, const Tensor& grad_output,
                       Tensor& grad_weight, Tensor& grad_bias);

enum class OptimizerKind { SGD, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, const ConvNet& net);

  // SGD: v = momentum * v + g, w -= lr * v.
  // Adam: bias-corrected first and second moments.
  // Rejects non-finite gradients before touching any parameter.
  void step(ConvNet& net, const Gradients& grads);

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps_taken() const { return t_; }

 private:
  OptimizerConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;  // weight_0, bias_0, weight_1, ...
  std::vector<Tensor> v_;
};

// Directory with layer_XXX_{weight,bias}.ptnsr in layer order and manifest.txt.
void save_checkpoint(const ConvNet& net, const std::filesystem::path& dir);
ConvNet load_checkpoint(const std::filesystem::path& dir);

}  // namespace ltseg
