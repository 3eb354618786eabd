#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ltseg/data.hpp"
#include "ltseg/losses.hpp"
#include "ltseg/metrics.hpp"
#include "ltseg/model.hpp"

namespace ltseg {

struct TrainConfig {
  LossSpec loss = LossSpec::defaults(LossKind::CE);
  OptimizerConfig optimizer;
  std::vector<std::size_t> hidden{16, 16};
  std::size_t batch_size = 8;
  std::size_t steps = 2000;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
  std::filesystem::path dataset_dir;
  std::filesystem::path output_dir;

  void validate() const;
};

std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);

struct LogRow {
  std::size_t step = 0;
  double loss = 0.0;
  std::vector<double> per_class;
};

struct TrainResult {
  ConvNet net;
  std::vector<LogRow> log;
  EvalReport report;  // test split, after the last step
};

// Independent streams derived from one seed: initialization, batch order and
// loss noise never depend on the loss kind, so runs with the same seed are paired.
enum class SeedStream : std::uint64_t { Init = 1, Batches = 2, LossNoise = 3 };
std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

// Trains on the train split of an in-memory dataset. When cfg.output_dir is
// non-empty, writes log.csv, checkpoint/, report.csv and config.json there.
TrainResult train(const TrainConfig& cfg, const Dataset& dataset);
// Loads cfg.dataset_dir, then trains.
TrainResult train(const TrainConfig& cfg);

// Argmax (lowest id on ties) over the split; shards images across
// LTSEG_THREADS threads (default 1) when threads == 0.
EvalReport evaluate(const ConvNet& net, const Dataset& dataset, Split split,
                    unsigned threads = 0);
EvalReport evaluate(const std::filesystem::path& checkpoint, const Dataset& dataset, Split split);

std::string format_log_csv(const std::vector<LogRow>& log, std::size_t num_classes);
std::string eval_csv_header(std::size_t num_classes);
std::string eval_csv_row(const std::string& method, std::uint64_t seed, const EvalReport& r);

}  // namespace ltseg
