#include "ltseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ltseg/error.hpp"

namespace ltseg {

namespace {

struct Labels {
  std::size_t batch = 0;
  std::size_t classes = 0;
  std::size_t pixels = 0;  // H * W
  std::vector<std::uint32_t> ids;  // [B, H*W]
};

void require_same_shape(const Tensor& logits, const Tensor& mask, const char* op) {
  if (logits.rank() != 4) {
    throw Error(std::string(op) + ": logits must be [B,L,H,W], got " +
                shape_to_string(logits.shape()));
  }
  if (logits.shape() != mask.shape()) {
    throw Error(std::string(op) + ": shape mismatch, logits " + shape_to_string(logits.shape()) +
                " vs mask " + shape_to_string(mask.shape()));
  }
}

Labels decode_labels(const Tensor& mask) {
  Labels out;
  out.batch = mask.dim(0);
  out.classes = mask.dim(1);
  out.pixels = mask.dim(2) * mask.dim(3);
  out.ids.resize(out.batch * out.pixels);
  const double* m = mask.data().data();
  for (std::size_t b = 0; b < out.batch; ++b) {
    for (std::size_t j = 0; j < out.pixels; ++j) {
      std::size_t hot = out.classes;
      bool valid = true;
      for (std::size_t l = 0; l < out.classes; ++l) {
        const double v = m[(b * out.classes + l) * out.pixels + j];
        if (v == 1.0) {
          if (hot != out.classes) valid = false;
          hot = l;
        } else if (v != 0.0) {
          valid = false;
        }
      }
      if (!valid || hot == out.classes) {
        throw Error("mask is not one-hot at pixel [" + std::to_string(b) + "," +
                    std::to_string(j / mask.dim(3)) + "," + std::to_string(j % mask.dim(3)) + "]");
      }
      out.ids[b * out.pixels + j] = static_cast<std::uint32_t>(hot);
    }
  }
  return out;
}

void require_positive_counts(const ClassStats& stats, std::size_t classes, const char* op) {
  if (stats.counts.size() != classes) {
    throw Error(std::string(op) + ": class stats have " + std::to_string(stats.counts.size()) +
                " classes, logits have " + std::to_string(classes));
  }
  for (std::size_t l = 0; l < classes; ++l) {
    if (stats.counts[l] <= 0) {
      throw Error(std::string(op) + ": class " + std::to_string(l) +
                  " absent from training split");
    }
  }
}

// Value and slope of a per-pixel term f(p) of the true-class probability p,
// where slope = p * df/dp. The gradient w.r.t. the logits fed to the
// softmax is slope * (onehot - softmax).
struct Term {
  double value;
  double slope;
};

// Shared accumulation for every loss that is a weighted function of the
// true-class probability of a (possibly adjusted) logit tensor.
//   logp          log-softmax of the adjusted logits
//   class_weight  per-class multiplier (empty = all ones)
//   grad_scale    d(adjusted logits)/d(logits), a scalar for every loss here
// term(p, q, logp_y, flat) returns the term for true-class probability p with
// q = 1 - p computed as the sum of the other probabilities.
template <typename TermFn>
LossOutput accumulate(const Tensor& logp, const Labels& labels, bool normalize,
                      const std::vector<double>& class_weight, double grad_scale,
                      TermFn&& term) {
  const auto B = labels.batch, L = labels.classes, HW = labels.pixels;
  Tensor sizes;
  if (normalize) {
    sizes = Tensor({B, L});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < HW; ++j) sizes[b * L + labels.ids[b * HW + j]] += 1.0;
    }
  }

  LossOutput out;
  out.per_class_value.assign(L, 0.0);
  out.grad_logits = Tensor(logp.shape());
  const double* lp = logp.data().data();
  double* g = out.grad_logits.data().data();
  const double inv_batch = 1.0 / static_cast<double>(B);

  std::vector<double> probs(L);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t base = b * L * HW;
    for (std::size_t j = 0; j < HW; ++j) {
      const std::size_t y = labels.ids[b * HW + j];
      double q = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        probs[l] = std::exp(lp[base + l * HW + j]);
        if (l != y) q += probs[l];
      }
      const std::size_t flat_y = base + y * HW + j;
      const Term t = term(probs[y], q, lp[flat_y], flat_y);

      double w = inv_batch;
      if (normalize) w /= sizes[b * L + y];
      if (!class_weight.empty()) w *= class_weight[y];

      out.value += w * t.value;
      out.per_class_value[y] += w * t.value;

      const double coef = grad_scale * w * t.slope;
      for (std::size_t l = 0; l < L; ++l) {
        g[base + l * HW + j] = coef * ((l == y ? 1.0 : 0.0) - probs[l]);
      }
    }
  }
  require_finite(out.grad_logits, "loss gradient");
  return out;
}

Term ce_term(double, double, double logp_y) { return {-logp_y, -1.0}; }

Term focal_term(double gamma, double p, double q, double logp_y) {
  if (q <= 0.0) return {0.0, gamma == 0.0 ? -1.0 : 0.0};
  const double qg = std::pow(q, gamma);
  const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * p * logp_y;
  return {-qg * logp_y, lead - qg};
}

LossOutput ce_like(const Tensor& logits, const Tensor& mask, const LossSpec& spec,
                   const std::vector<double>& class_weight, bool with_focal, const char* op) {
  require_same_shape(logits, mask, op);
  const Labels labels = decode_labels(mask);
  const Tensor logp = log_softmax_channels(logits);
  if (with_focal) {
    const double gamma = spec.gamma;
    return accumulate(logp, labels, spec.normalize_by_mask_size, class_weight, 1.0,
                      [gamma](double p, double q, double lpy, std::size_t) {
                        return focal_term(gamma, p, q, lpy);
                      });
  }
  return accumulate(logp, labels, spec.normalize_by_mask_size, class_weight, 1.0,
                    [](double p, double q, double lpy, std::size_t) { return ce_term(p, q, lpy); });
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::CE: return "ce";
    case LossKind::Focal: return "focal";
    case LossKind::CB: return "cb";
    case LossKind::CBFocal: return "cbfocal";
    case LossKind::BMS: return "bms";
    case LossKind::LDAM: return "ldam";
    case LossKind::BLV: return "blv";
    case LossKind::PAT: return "pat";
  }
  return "?";
}

std::string to_string(NoiseDist dist) {
  return dist == NoiseDist::Gaussian ? "gaussian" : "uniform";
}

std::string to_string(BetaVariant variant) {
  return variant == BetaVariant::Literal ? "literal" : "standard";
}

LossKind parse_loss_kind(std::string_view name) {
  for (auto k : kAllLossKinds) {
    if (to_string(k) == name) return k;
  }
  throw Error("unknown loss kind \"" + std::string(name) +
              "\" (expected ce, focal, cb, cbfocal, bms, ldam, blv or pat)");
}

NoiseDist parse_noise_dist(std::string_view name) {
  if (name == "gaussian") return NoiseDist::Gaussian;
  if (name == "uniform") return NoiseDist::Uniform;
  throw Error("unknown distribution \"" + std::string(name) + "\" (expected gaussian or uniform)");
}

BetaVariant parse_beta_variant(std::string_view name) {
  if (name == "literal") return BetaVariant::Literal;
  if (name == "standard") return BetaVariant::Standard;
  throw Error("unknown beta variant \"" + std::string(name) + "\" (expected literal or standard)");
}

LossSpec LossSpec::defaults(LossKind kind) {
  LossSpec s;
  s.kind = kind;
  s.normalize_by_mask_size = kind == LossKind::PAT;
  return s;
}

bool LossSpec::needs_class_stats() const {
  switch (kind) {
    case LossKind::CB:
    case LossKind::CBFocal:
    case LossKind::BMS:
    case LossKind::LDAM:
    case LossKind::BLV:
      return true;
    default:
      return false;
  }
}

void LossSpec::validate() const {
  const auto bad = [this](const std::string& msg) {
    return Error(to_string(kind) + " loss: " + msg);
  };
  switch (kind) {
    case LossKind::Focal:
    case LossKind::CBFocal:
      if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw bad("gamma must be >= 0");
      if (kind == LossKind::Focal) break;
      [[fallthrough]];
    case LossKind::CB:
      if (!(beta_cb > 0.0 && beta_cb < 1.0)) throw bad("beta_cb must be in (0, 1)");
      break;
    case LossKind::LDAM:
      if (!(max_margin >= 0.0) || !std::isfinite(max_margin)) throw bad("max_margin must be >= 0");
      if (!(scale_s > 0.0) || !std::isfinite(scale_s)) throw bad("scale must be > 0");
      break;
    case LossKind::BLV:
      if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw bad("sigma must be >= 0");
      break;
    case LossKind::PAT:
      if (!(temperature > 0.0) || !std::isfinite(temperature)) throw bad("temperature must be > 0");
      if (!(epsilon >= 0.0 && epsilon < 1.0)) throw bad("epsilon must be in [0, 1)");
      break;
    default:
      break;
  }
}

ClassStats ClassStats::from_counts(std::vector<std::int64_t> counts) {
  ClassStats s;
  for (auto c : counts) {
    if (c < 0) throw Error("class stats: negative count");
    s.total += c;
  }
  s.counts = std::move(counts);
  return s;
}

Tensor mask_sizes(const Tensor& mask) {
  if (mask.rank() != 4) {
    throw Error("mask_sizes: mask must be [B,L,H,W], got " + shape_to_string(mask.shape()));
  }
  const Labels labels = decode_labels(mask);
  Tensor sizes({labels.batch, labels.classes});
  for (std::size_t b = 0; b < labels.batch; ++b) {
    for (std::size_t j = 0; j < labels.pixels; ++j) {
      sizes[b * labels.classes + labels.ids[b * labels.pixels + j]] += 1.0;
    }
  }
  return sizes;
}

LossOutput ce(const Tensor& logits, const Tensor& mask, const LossSpec& spec) {
  return ce_like(logits, mask, spec, {}, false, "ce");
}

LossOutput focal(const Tensor& logits, const Tensor& mask, const LossSpec& spec) {
  if (!(spec.gamma >= 0.0)) throw Error("focal: gamma must be >= 0");
  return ce_like(logits, mask, spec, {}, true, "focal");
}

std::vector<double> cb_weights(const ClassStats& stats, double beta_cb) {
  if (!(beta_cb > 0.0 && beta_cb < 1.0)) throw Error("cb_weights: beta_cb must be in (0, 1)");
  const std::size_t L = stats.counts.size();
  if (L == 0) throw Error("cb_weights: no classes");
  require_positive_counts(stats, L, "cb_weights");
  std::vector<double> w(L);
  const double log_beta = std::log(beta_cb);
  double sum = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    // 1 - beta^n without cancellation for beta close to 1
    const double effective = -std::expm1(static_cast<double>(stats.counts[l]) * log_beta);
    w[l] = (1.0 - beta_cb) / effective;
    sum += w[l];
  }
  for (auto& v : w) v *= static_cast<double>(L) / sum;
  return w;
}

LossOutput cb(const Tensor& logits, const Tensor& mask, const LossSpec& spec,
              const ClassStats& stats) {
  require_same_shape(logits, mask, "cb");
  require_positive_counts(stats, logits.dim(1), "cb");
  return ce_like(logits, mask, spec, cb_weights(stats, spec.beta_cb), false, "cb");
}

LossOutput cbfocal(const Tensor& logits, const Tensor& mask, const LossSpec& spec,
                   const ClassStats& stats) {
  require_same_shape(logits, mask, "cbfocal");
  require_positive_counts(stats, logits.dim(1), "cbfocal");
  return ce_like(logits, mask, spec, cb_weights(stats, spec.beta_cb), true, "cbfocal");
}

LossOutput bms(const Tensor& logits, const Tensor& mask, const ClassStats& stats,
               const LossSpec& spec) {
  require_same_shape(logits, mask, "bms");
  const std::size_t L = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  require_positive_counts(stats, L, "bms");
  const Labels labels = decode_labels(mask);

  Tensor adjusted(logits.shape());
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    for (std::size_t l = 0; l < L; ++l) {
      const double shift = std::log(static_cast<double>(stats.counts[l]));
      const std::size_t off = (b * L + l) * HW;
      for (std::size_t j = 0; j < HW; ++j) adjusted[off + j] = logits[off + j] + shift;
    }
  }
  const Tensor logp = log_softmax_channels(adjusted);
  return accumulate(logp, labels, spec.normalize_by_mask_size, {}, 1.0,
                    [](double p, double q, double lpy, std::size_t) { return ce_term(p, q, lpy); });
}

std::vector<double> ldam_margins(const ClassStats& stats, double max_margin) {
  const std::size_t L = stats.counts.size();
  require_positive_counts(stats, L, "ldam_margins");
  std::vector<double> m(L);
  double largest = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    m[l] = 1.0 / std::pow(static_cast<double>(stats.counts[l]), 0.25);
    largest = std::max(largest, m[l]);
  }
  for (auto& v : m) v *= max_margin / largest;
  return m;
}

LossOutput ldam(const Tensor& logits, const Tensor& mask, const ClassStats& stats,
                const LossSpec& spec) {
  require_same_shape(logits, mask, "ldam");
  if (!(spec.scale_s > 0.0)) throw Error("ldam: scale must be > 0");
  if (!(spec.max_margin >= 0.0)) throw Error("ldam: max_margin must be >= 0");
  const std::size_t B = logits.dim(0), L = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  require_positive_counts(stats, L, "ldam");
  const Labels labels = decode_labels(mask);
  const auto margins = ldam_margins(stats, spec.max_margin);

  // s * (z - Delta_y) on the true channel, s * z elsewhere
  Tensor adjusted(logits.shape());
  const double s = spec.scale_s;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t off = (b * L + l) * HW;
      for (std::size_t j = 0; j < HW; ++j) {
        const double margin = labels.ids[b * HW + j] == l ? margins[l] : 0.0;
        adjusted[off + j] = s * (logits[off + j] - margin);
      }
    }
  }
  const Tensor logp = log_softmax_channels(adjusted);
  return accumulate(logp, labels, spec.normalize_by_mask_size, {}, s,
                    [](double p, double q, double lpy, std::size_t) { return ce_term(p, q, lpy); });
}

std::vector<double> blv_amplitudes(const ClassStats& stats) {
  const std::size_t L = stats.counts.size();
  require_positive_counts(stats, L, "blv_amplitudes");
  const auto head = *std::max_element(stats.counts.begin(), stats.counts.end());
  std::vector<double> c(L);
  for (std::size_t l = 0; l < L; ++l) {
    c[l] = std::log(static_cast<double>(head) / static_cast<double>(stats.counts[l]));
  }
  return c;
}

Tensor blv_noise(const Shape& shape, double sigma, NoiseDist dist, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw Error("blv_noise: sigma must be >= 0");
  Tensor noise(shape);
  if (sigma == 0.0) return noise;
  std::mt19937_64 rng(seed);
  auto out = noise.data();
  if (dist == NoiseDist::Gaussian) {
    std::normal_distribution<double> draw(0.0, sigma);
    for (auto& v : out) v = std::abs(draw(rng));
  } else {
    // same standard deviation as the Gaussian: half-width sigma * sqrt(3)
    const double half = sigma * std::sqrt(3.0);
    std::uniform_real_distribution<double> draw(-half, half);
    for (auto& v : out) v = std::abs(draw(rng));
  }
  return noise;
}

LossOutput blv(const Tensor& logits, const Tensor& mask, const ClassStats& stats,
               const LossSpec& spec, std::uint64_t seed) {
  require_same_shape(logits, mask, "blv");
  const std::size_t B = logits.dim(0), L = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  require_positive_counts(stats, L, "blv");
  const Labels labels = decode_labels(mask);
  const auto amplitude = blv_amplitudes(stats);

  const Tensor noise = blv_noise(logits.shape(), spec.sigma, spec.dist, seed);
  Tensor perturbed(logits.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t off = (b * L + l) * HW;
      for (std::size_t j = 0; j < HW; ++j) {
        perturbed[off + j] = logits[off + j] + amplitude[l] * noise[off + j];
      }
    }
  }
  const Tensor logp = log_softmax_channels(perturbed);
  return accumulate(logp, labels, spec.normalize_by_mask_size, {}, 1.0,
                    [](double p, double q, double lpy, std::size_t) { return ce_term(p, q, lpy); });
}

double pat_beta_scalar(double prob, double temperature, double epsilon, BetaVariant variant) {
  return variant == BetaVariant::Literal ? std::exp((1.0 - prob - epsilon) / temperature)
                                         : std::exp((prob - 1.0 + epsilon) / temperature);
}

Tensor pat_beta(const Tensor& probs, double temperature, double epsilon, BetaVariant variant) {
  if (!(temperature > 0.0)) throw Error("pat_beta: temperature must be > 0");
  Tensor beta(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error("pat_beta: probability " + std::to_string(p) + " at index " + std::to_string(i) +
                  " outside [0, 1]");
    }
    beta[i] = pat_beta_scalar(p, temperature, epsilon, variant);
  }
  return beta;
}

namespace {

LossOutput pat_from(const Tensor& logp, const Labels& labels, const Tensor& beta,
                    const LossSpec& spec, bool full) {
  const double T = spec.temperature;
  const double dbeta_sign = spec.variant == BetaVariant::Literal ? -1.0 : 1.0;
  return accumulate(logp, labels, spec.normalize_by_mask_size, {}, 1.0,
                    [&](double p, double, double lpy, std::size_t flat) {
                      const double b = beta[flat];
                      double slope = -b;
                      // d beta / dp = +-beta / T, so p * d(beta * -log p)/dp gains
                      // +-(beta / T) * p * (-log p)
                      if (full) slope += dbeta_sign * (b / T) * p * (-lpy);
                      return Term{-b * lpy, slope};
                    });
}

}  // namespace

LossOutput pat(const Tensor& logits, const Tensor& mask, const LossSpec& spec) {
  require_same_shape(logits, mask, "pat");
  if (!(spec.temperature > 0.0)) throw Error("pat: temperature must be > 0");
  const Labels labels = decode_labels(mask);
  const Tensor logp = log_softmax_channels(logits);

  // weight tensor with the logits' shape, formed from the softmax output
  Tensor beta(logits.shape());
  {
    const double* lp = logp.data().data();
    double* bt = beta.data().data();
    for (std::size_t i = 0; i < beta.size(); ++i) {
      bt[i] = pat_beta_scalar(std::exp(lp[i]), spec.temperature, spec.epsilon, spec.variant);
    }
  }
  return pat_from(logp, labels, beta, spec, spec.differentiate_beta);
}

LossOutput pat_fixed_beta(const Tensor& logits, const Tensor& mask, const Tensor& beta,
                          const LossSpec& spec) {
  require_same_shape(logits, mask, "pat_fixed_beta");
  require_same_shape(logits, beta, "pat_fixed_beta");
  const Labels labels = decode_labels(mask);
  return pat_from(log_softmax_channels(logits), labels, beta, spec, false);
}

LossOutput compute_loss(const LossSpec& spec, const Tensor& logits, const Tensor& mask,
                        const std::optional<ClassStats>& stats, std::uint64_t seed) {
  spec.validate();
  if (spec.needs_class_stats() && !stats) {
    throw Error(to_string(spec.kind) + " loss requires class statistics");
  }
  switch (spec.kind) {
    case LossKind::CE: return ce(logits, mask, spec);
    case LossKind::Focal: return focal(logits, mask, spec);
    case LossKind::CB: return cb(logits, mask, spec, *stats);
    case LossKind::CBFocal: return cbfocal(logits, mask, spec, *stats);
    case LossKind::BMS: return bms(logits, mask, *stats, spec);
    case LossKind::LDAM: return ldam(logits, mask, *stats, spec);
    case LossKind::BLV: return blv(logits, mask, *stats, spec, seed);
    case LossKind::PAT: return pat(logits, mask, spec);
  }
  throw Error("compute_loss: unhandled loss kind");
}

}  // namespace ltseg
