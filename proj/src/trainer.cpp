#include "ltseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "ltseg/error.hpp"

namespace ltseg {

namespace {

using json = nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const char* where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw Error(std::string("config: unknown key \"") + key + "\" in " + where);
    }
  }
}

json loss_to_json(const LossSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"gamma", s.gamma},
          {"beta_cb", s.beta_cb},
          {"max_margin", s.max_margin},
          {"scale", s.scale_s},
          {"sigma", s.sigma},
          {"dist", to_string(s.dist)},
          {"temperature", s.temperature},
          {"epsilon", s.epsilon},
          {"variant", to_string(s.variant)},
          {"differentiate_beta", s.differentiate_beta},
          {"normalize_mask_size", s.normalize_by_mask_size}};
}

LossSpec loss_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"kind", "gamma", "beta_cb", "max_margin", "scale", "sigma", "dist",
                       "temperature", "epsilon", "variant", "differentiate_beta",
                       "normalize_mask_size"},
                      "loss");
  LossSpec s = LossSpec::defaults(parse_loss_kind(j.value("kind", std::string("ce"))));
  s.gamma = j.value("gamma", s.gamma);
  s.beta_cb = j.value("beta_cb", s.beta_cb);
  s.max_margin = j.value("max_margin", s.max_margin);
  s.scale_s = j.value("scale", s.scale_s);
  s.sigma = j.value("sigma", s.sigma);
  if (j.contains("dist")) s.dist = parse_noise_dist(j.at("dist").get<std::string>());
  s.temperature = j.value("temperature", s.temperature);
  s.epsilon = j.value("epsilon", s.epsilon);
  if (j.contains("variant")) s.variant = parse_beta_variant(j.at("variant").get<std::string>());
  s.differentiate_beta = j.value("differentiate_beta", s.differentiate_beta);
  s.normalize_by_mask_size = j.value("normalize_mask_size", s.normalize_by_mask_size);
  return s;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

unsigned threads_from_env() {
  if (const char* v = std::getenv("LTSEG_THREADS")) {
    const long n = std::strtol(v, nullptr, 10);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  return 1;
}

Confusion evaluate_range(const ConvNet& net, const Dataset& ds, std::size_t begin,
                         std::size_t end) {
  constexpr std::size_t kChunk = 16;
  Confusion conf(ds.num_classes);
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; i += kChunk) {
    idx.clear();
    for (std::size_t k = i; k < std::min(end, i + kChunk); ++k) idx.push_back(k);
    const Tensor logits = infer(net, ds.batch_images(idx));
    conf.accumulate(argmax_channels(logits), ds.batch_masks(idx));
  }
  return conf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

}  // namespace

void TrainConfig::validate() const {
  loss.validate();
  if (steps == 0) throw Error("train config: steps must be > 0");
  if (batch_size == 0) throw Error("train config: batch_size must be >= 1");
  if (eval_every == 0) throw Error("train config: eval_every must be >= 1");
  if (!(optimizer.lr >= 0.0)) throw Error("train config: lr must be >= 0");
  for (auto h : hidden) {
    if (h == 0) throw Error("train config: hidden widths must be positive");
  }
}

std::string to_json(const TrainConfig& cfg) {
  const json j = {{"loss", loss_to_json(cfg.loss)},
                  {"optimizer",
                   {{"kind", to_string(cfg.optimizer.kind)},
                    {"lr", cfg.optimizer.lr},
                    {"momentum", cfg.optimizer.momentum},
                    {"beta1", cfg.optimizer.beta1},
                    {"beta2", cfg.optimizer.beta2},
                    {"eps", cfg.optimizer.eps}}},
                  {"hidden", cfg.hidden},
                  {"batch_size", cfg.batch_size},
                  {"steps", cfg.steps},
                  {"eval_every", cfg.eval_every},
                  {"seed", cfg.seed},
                  {"dataset", cfg.dataset_dir.string()},
                  {"out", cfg.output_dir.string()}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("config: " + std::string(e.what()));
  }
  if (!j.is_object()) throw Error("config: top level must be an object");
  TrainConfig cfg;
  try {
    reject_unknown_keys(j,
                        {"loss", "optimizer", "hidden", "batch_size", "steps", "eval_every", "seed",
                         "dataset", "out"},
                        "config");
    if (j.contains("loss")) cfg.loss = loss_from_json(j.at("loss"));
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      reject_unknown_keys(o, {"kind", "lr", "momentum", "beta1", "beta2", "eps"}, "optimizer");
      if (o.contains("kind")) cfg.optimizer.kind = parse_optimizer_kind(o.at("kind").get<std::string>());
      cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
      cfg.optimizer.momentum = o.value("momentum", cfg.optimizer.momentum);
      cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
      cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
      cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
    }
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.dataset_dir = j.value("dataset", std::string());
    cfg.output_dir = j.value("out", std::string());
  } catch (const json::exception& e) {
    throw Error("config: " + std::string(e.what()));
  }
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return train_config_from_json(ss.str());
}

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(stream) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

TrainResult train(const TrainConfig& cfg, const Dataset& dataset) {
  cfg.validate();
  const auto train_idx = dataset.split_indices(Split::Train);
  if (train_idx.empty()) throw Error("train: train split is empty");
  const std::size_t L = dataset.num_classes;

  std::optional<ClassStats> stats;
  if (cfg.loss.needs_class_stats()) stats = class_stats(dataset, Split::Train);

  std::vector<std::size_t> plan{dataset.channels()};
  plan.insert(plan.end(), cfg.hidden.begin(), cfg.hidden.end());
  plan.push_back(L);

  TrainResult result;
  result.net = ConvNet::create(plan, derive_seed(cfg.seed, SeedStream::Init));
  Optimizer opt(cfg.optimizer, result.net);

  std::mt19937_64 batch_rng(derive_seed(cfg.seed, SeedStream::Batches));
  const std::uint64_t noise_seed = derive_seed(cfg.seed, SeedStream::LossNoise);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::vector<std::size_t> batch;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    batch.clear();
    while (batch.size() < std::min(cfg.batch_size, train_idx.size())) {
      if (cursor == order.size()) {
        order = permutation(train_idx.size(), batch_rng);
        cursor = 0;
      }
      batch.push_back(train_idx[order[cursor++]]);
    }

    const Tensor images = dataset.batch_images(batch);
    const Tensor mask = onehot(dataset.batch_masks(batch), L);
    ForwardResult fwd;
    LossOutput out;
    try {
      fwd = forward(result.net, images);
      out = compute_loss(cfg.loss, fwd.logits, mask, stats, noise_seed + step);
    } catch (const Error& e) {
      throw Error("train: " + to_string(cfg.loss.kind) + " loss failed at step " +
                  std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(out.value)) {
      throw Error("train: non-finite " + to_string(cfg.loss.kind) + " loss at step " +
                  std::to_string(step));
    }
    const Gradients grads = backward(result.net, fwd.cache, out.grad_logits);
    try {
      opt.step(result.net, grads);
    } catch (const Error& e) {
      throw Error("train: step " + std::to_string(step) + ": " + e.what());
    }

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      result.log.push_back({step, out.value, out.per_class_value});
    }
  }

  result.report = evaluate(result.net, dataset, Split::Test);

  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "log.csv", format_log_csv(result.log, L));
    save_checkpoint(result.net, cfg.output_dir / "checkpoint");
    write_text(cfg.output_dir / "report.csv",
               eval_csv_header(L) + eval_csv_row(to_string(cfg.loss.kind), cfg.seed, result.report));
    write_text(cfg.output_dir / "config.json", to_json(cfg) + "\n");
  }
  return result;
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.dataset_dir.empty()) throw Error("train: no dataset directory given");
  const Dataset ds = load_dataset(cfg.dataset_dir);
  return train(cfg, ds);
}

EvalReport evaluate(const ConvNet& net, const Dataset& dataset, Split split, unsigned threads) {
  const auto [begin, end] = dataset.split_range(split);
  if (begin == end) throw Error("evaluate: split \"" + to_string(split) + "\" is empty");
  if (net.in_channels() != dataset.channels() || net.out_channels() != dataset.num_classes) {
    throw Error("evaluate: network maps " + std::to_string(net.in_channels()) + " -> " +
                std::to_string(net.out_channels()) + " channels, dataset has C=" +
                std::to_string(dataset.channels()) + ", L=" + std::to_string(dataset.num_classes));
  }
  if (threads == 0) threads = threads_from_env();
  const std::size_t n = end - begin;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));

  Confusion total(dataset.num_classes);
  if (threads <= 1) {
    total = evaluate_range(net, dataset, begin, end);
  } else {
    std::vector<Confusion> shards(threads, Confusion(dataset.num_classes));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = begin + n * t / threads, e = begin + n * (t + 1) / threads;
      pool.emplace_back([&, t, b, e] { shards[t] = evaluate_range(net, dataset, b, e); });
    }
    for (auto& th : pool) th.join();
    for (const auto& s : shards) total.merge(s);
  }
  return report(total);
}

EvalReport evaluate(const std::filesystem::path& checkpoint, const Dataset& dataset, Split split) {
  return evaluate(load_checkpoint(checkpoint), dataset, split);
}

std::string format_log_csv(const std::vector<LogRow>& log, std::size_t num_classes) {
  std::string s = "step,loss";
  for (std::size_t l = 0; l < num_classes; ++l) s += ",per_class_" + std::to_string(l);
  s += "\n";
  for (const auto& row : log) {
    s += std::to_string(row.step) + "," + fmt(row.loss);
    for (double v : row.per_class) s += "," + fmt(v);
    s += "\n";
  }
  return s;
}

std::string eval_csv_header(std::size_t num_classes) {
  std::string s = "method,seed,miou,pix_acc,dice_err";
  for (std::size_t l = 0; l < num_classes; ++l) s += ",iou_" + std::to_string(l);
  return s + "\n";
}

std::string eval_csv_row(const std::string& method, std::uint64_t seed, const EvalReport& r) {
  std::string s = method + "," + std::to_string(seed) + "," + fmt(r.miou) + "," + fmt(r.pix_acc) +
                  "," + fmt(r.dice_err);
  for (double v : r.per_class_iou) s += "," + (std::isnan(v) ? std::string("nan") : fmt(v));
  return s + "\n";
}

}  // namespace ltseg
