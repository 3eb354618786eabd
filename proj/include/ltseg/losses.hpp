#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ltseg/tensor.hpp"

namespace ltseg {

enum class LossKind { CE, Focal, CB, CBFocal, BMS, LDAM, BLV, PAT };
enum class NoiseDist { Gaussian, Uniform };

// Two readings of the adaptive coefficient:
//   Literal: beta = exp((1 - p - eps) / T)   >= 1, decreasing in p
//   Standard:  beta = exp((p - 1 + eps) / T)   <= 1 at eps = 0, increasing in p
enum class BetaVariant { Literal, Standard };

inline constexpr LossKind kAllLossKinds[] = {LossKind::CE,      LossKind::Focal, LossKind::CB,
                                             LossKind::CBFocal, LossKind::BMS,   LossKind::LDAM,
                                             LossKind::BLV,     LossKind::PAT};

std::string to_string(LossKind kind);
std::string to_string(NoiseDist dist);
std::string to_string(BetaVariant variant);
LossKind parse_loss_kind(std::string_view name);
NoiseDist parse_noise_dist(std::string_view name);
BetaVariant parse_beta_variant(std::string_view name);

struct LossSpec {
  LossKind kind = LossKind::CE;

  double gamma = 2.0;       // Focal, CBFocal
  double beta_cb = 0.9999;  // CB, CBFocal
  double max_margin = 0.5;  // LDAM
  double scale_s = 20.0;    // LDAM
  double sigma = 0.5;       // BLV
  NoiseDist dist = NoiseDist::Gaussian;

  double temperature = 20.0;  // PAT
  double epsilon = 1e-6;      // PAT
  BetaVariant variant = BetaVariant::Standard;
  // When false, beta is a constant weight in the backward pass.
  bool differentiate_beta = false;

  // Divide every class-l pixel term of image i by the class's mask size in that image.
  bool normalize_by_mask_size = false;

  // Defaults for a kind: mask-size normalization is on for PAT only.
  static LossSpec defaults(LossKind kind);

  bool needs_class_stats() const;
  void validate() const;
};

struct ClassStats {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  static ClassStats from_counts(std::vector<std::int64_t> counts);
  std::size_t num_classes() const { return counts.size(); }
};

struct LossOutput {
  double value = 0.0;
  Tensor grad_logits;
  std::vector<double> per_class_value;
};

// [B,L] tensor of per-image, per-class pixel counts of a one-hot mask.
Tensor mask_sizes(const Tensor& mask);

LossOutput ce(const Tensor& logits, const Tensor& mask, const LossSpec& spec);
LossOutput focal(const Tensor& logits, const Tensor& mask, const LossSpec& spec);

// Effective-number class weights, rescaled to sum to L.
std::vector<double> cb_weights(const ClassStats& stats, double beta_cb);
LossOutput cb(const Tensor& logits, const Tensor& mask, const LossSpec& spec,
              const ClassStats& stats);
LossOutput cbfocal(const Tensor& logits, const Tensor& mask, const LossSpec& spec,
                   const ClassStats& stats);

// Balanced softmax: logits shifted by log n_y.
LossOutput bms(const Tensor& logits, const Tensor& mask, const ClassStats& stats,
               const LossSpec& spec = LossSpec::defaults(LossKind::BMS));

// Delta_y proportional to n_y^{-1/4}, rescaled so the largest margin equals max_margin.
std::vector<double> ldam_margins(const ClassStats& stats, double max_margin);
LossOutput ldam(const Tensor& logits, const Tensor& mask, const ClassStats& stats,
                const LossSpec& spec);

// c_y = log(max_k n_k / n_y); zero for the most frequent class.
std::vector<double> blv_amplitudes(const ClassStats& stats);
// |draw| per element from dist(0, sigma); all zeros when sigma == 0.
Tensor blv_noise(const Shape& shape, double sigma, NoiseDist dist, std::uint64_t seed);
LossOutput blv(const Tensor& logits, const Tensor& mask, const ClassStats& stats,
               const LossSpec& spec, std::uint64_t seed);

double pat_beta_scalar(double prob, double temperature, double epsilon, BetaVariant variant);
Tensor pat_beta(const Tensor& probs, double temperature, double epsilon, BetaVariant variant);
LossOutput pat(const Tensor& logits, const Tensor& mask, const LossSpec& spec);
// PAT with an externally supplied coefficient tensor held constant.
LossOutput pat_fixed_beta(const Tensor& logits, const Tensor& mask, const Tensor& beta,
                          const LossSpec& spec);

// Routes to the loss selected by spec.kind. stats is required by CB, CBFocal,
// BMS, LDAM and BLV; seed only affects BLV.
LossOutput compute_loss(const LossSpec& spec, const Tensor& logits, const Tensor& mask,
                        const std::optional<ClassStats>& stats, std::uint64_t seed);

}  // namespace ltseg
