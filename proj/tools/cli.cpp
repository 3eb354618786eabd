#include "cli.hpp"

#include <algorithm>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ltseg/bench.hpp"
#include "ltseg/curve.hpp"
#include "ltseg/data.hpp"
#include "ltseg/error.hpp"
#include "ltseg/gradcheck.hpp"
#include "ltseg/trainer.hpp"

namespace ltseg::cli {

namespace {

using json = nlohmann::json;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(std::string(what) + ": \"" + item + "\" is not a number");
    }
  }
  return out;
}

struct LossFlags {
  std::string kind = "ce";
  double gamma = 2.0, beta_cb = 0.9999, margin = 0.5, scale = 20.0, sigma = 0.5;
  double temperature = 20.0, epsilon = 1e-6;
  std::string dist = "gaussian", variant = "standard", normalize = "off";
  bool differentiate_beta = false;
  std::vector<CLI::Option*> options;

  void add(CLI::App* app) {
    options = {
        app->add_option("--loss", kind, "Loss kind")
            ->check(CLI::IsMember({"ce", "focal", "cb", "cbfocal", "bms", "ldam", "blv", "pat"})),
        app->add_option("--gamma", gamma, "Focal / CBFocal exponent"),
        app->add_option("--temperature", temperature, "PAT temperature T"),
        app->add_option("--epsilon", epsilon, "PAT constant epsilon"),
        app->add_option("--variant", variant, "PAT coefficient variant")
            ->check(CLI::IsMember({"literal", "standard"})),
        app->add_option("--beta-cb", beta_cb, "Class-balanced effective-number beta"),
        app->add_option("--margin", margin, "LDAM maximum margin"),
        app->add_option("--scale", scale, "LDAM logit scale s"),
        app->add_option("--sigma", sigma, "BLV noise standard deviation"),
        app->add_option("--dist", dist, "BLV noise distribution")
            ->check(CLI::IsMember({"gaussian", "uniform"})),
        app->add_option("--normalize-mask-size", normalize,
                        "Divide class terms by per-image mask size (default: on for pat only)")
            ->check(CLI::IsMember({"on", "off"})),
        app->add_flag("--differentiate-beta", differentiate_beta,
                      "Differentiate through the PAT coefficients instead of treating them as constants"),
    };
  }

  bool set(const char* name) const {
    for (auto* o : options) {
      if (o->check_name(name)) return o->count() > 0;
    }
    return false;
  }

  LossSpec resolve(LossSpec base) const {
    if (set("--loss")) {
      const auto kind_parsed = parse_loss_kind(kind);
      if (kind_parsed != base.kind) base = LossSpec::defaults(kind_parsed);
    }
    if (set("--gamma")) base.gamma = gamma;
    if (set("--temperature")) base.temperature = temperature;
    if (set("--epsilon")) base.epsilon = epsilon;
    if (set("--variant")) base.variant = parse_beta_variant(variant);
    if (set("--beta-cb")) base.beta_cb = beta_cb;
    if (set("--margin")) base.max_margin = margin;
    if (set("--scale")) base.scale_s = scale;
    if (set("--sigma")) base.sigma = sigma;
    if (set("--dist")) base.dist = parse_noise_dist(dist);
    if (set("--normalize-mask-size")) base.normalize_by_mask_size = normalize == "on";
    if (set("--differentiate-beta")) base.differentiate_beta = differentiate_beta;
    base.validate();
    return base;
  }
};

void print_resolved(std::ostream& err, const std::string& command, const json& cfg,
                    std::uint64_t seed) {
  err << "# " << command << " config " << cfg.dump() << "\n# seed " << seed << "\n";
}

int cmd_gen(const SynthConfig& cfg, const std::string& freqs, const std::string& out_dir,
            std::ostream& out, std::ostream& err) {
  SynthConfig c = cfg;
  if (!freqs.empty()) c.class_freqs = parse_doubles(freqs, "--freqs");
  c.validate();
  print_resolved(err, "gen",
                 {{"out", out_dir},
                  {"n", c.n_images},
                  {"channels", c.channels},
                  {"height", c.height},
                  {"width", c.width},
                  {"classes", c.num_classes},
                  {"skew", c.skew},
                  {"targets", c.target_frequencies()},
                  {"contrast", c.contrast},
                  {"noise", c.noise_sigma}},
                 c.seed);
  const Dataset ds = generate(c);
  save_dataset(ds, out_dir);
  const auto stats = class_stats(ds, Split::Train);
  out << "class,target,train_pixels,train_frequency\n";
  const auto targets = c.target_frequencies();
  for (std::size_t l = 0; l < stats.counts.size(); ++l) {
    out << l << "," << targets[l] << "," << stats.counts[l] << ","
        << static_cast<double>(stats.counts[l]) / static_cast<double>(stats.total) << "\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ltseg: long-tailed segmentation loss laboratory"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // gen
  SynthConfig synth;
  std::string gen_out, gen_freqs, gen_shapes = "mixed";
  auto* gen = app.add_subcommand("gen", "Generate a synthetic long-tailed segmentation dataset");
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--n", synth.n_images, "Number of images");
  gen->add_option("--channels", synth.channels, "Image channels");
  gen->add_option("--height", synth.height, "Image height");
  gen->add_option("--width", synth.width, "Image width");
  gen->add_option("--classes", synth.num_classes, "Number of classes (class 0 is the head)");
  gen->add_option("--skew", synth.skew, "Power-law exponent of class frequencies");
  gen->add_option("--freqs", gen_freqs, "Explicit comma-separated class frequencies");
  gen->add_option("--shapes", gen_shapes, "Object shapes")
      ->check(CLI::IsMember({"rectangles", "ellipses", "mixed"}));
  gen->add_option("--contrast", synth.contrast, "Class colour distance from grey");
  gen->add_option("--noise", synth.noise_sigma, "Per-pixel Gaussian noise sigma");
  gen->add_option("--seed", synth.seed, "Generator seed");

  // train
  TrainConfig tcfg;
  std::string train_config_path, train_dataset, train_out, train_opt = "adam", train_hidden;
  LossFlags train_loss;
  auto* train_cmd = app.add_subcommand("train", "Train the per-pixel classifier with one loss");
  train_cmd->add_option("--config", train_config_path, "JSON config file; flags override it");
  train_cmd->add_option("--dataset", train_dataset, "Dataset directory");
  train_cmd->add_option("--out", train_out, "Output directory");
  train_loss.add(train_cmd);
  auto* o_opt = train_cmd->add_option("--optimizer", train_opt, "Optimizer")
                    ->check(CLI::IsMember({"adam", "sgd"}));
  auto* o_lr = train_cmd->add_option("--lr", tcfg.optimizer.lr, "Learning rate");
  auto* o_mom = train_cmd->add_option("--momentum", tcfg.optimizer.momentum, "SGD momentum");
  auto* o_batch = train_cmd->add_option("--batch", tcfg.batch_size, "Mini-batch size");
  auto* o_steps = train_cmd->add_option("--steps", tcfg.steps, "Training steps");
  auto* o_every = train_cmd->add_option("--eval-every", tcfg.eval_every, "Logging interval");
  auto* o_seed = train_cmd->add_option("--seed", tcfg.seed, "Seed");
  auto* o_hidden = train_cmd->add_option("--hidden", train_hidden, "Hidden widths, e.g. 16,16");

  // eval
  std::string eval_ckpt, eval_dataset, eval_split = "test", eval_method = "model";
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required();
  eval_cmd->add_option("--dataset", eval_dataset, "Dataset directory")->required();
  eval_cmd->add_option("--split", eval_split, "Split")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--method", eval_method, "Method label for the CSV row");
  eval_cmd->add_option("--seed", eval_seed, "Seed label for the CSV row");

  // bench
  BenchOptions bopt;
  std::string bench_shape = "2,19,64,64", bench_norm = "off";
  auto* bench_cmd = app.add_subcommand("bench", "Time and allocation accounting per loss kind");
  bench_cmd->add_option("--shape", bench_shape, "B,L,H,W");
  bench_cmd->add_option("--reps", bopt.reps, "Timed repetitions (>= 10)");
  bench_cmd->add_option("--warmup", bopt.warmup, "Untimed warmup repetitions");
  bench_cmd->add_option("--seed", bopt.seed, "Input seed");
  bench_cmd->add_option("--normalize-mask-size", bench_norm, "Mask-size normalization for all kinds")
      ->check(CLI::IsMember({"on", "off"}));

  // curve
  std::string curve_methods = "focal:2,focal:5,pat:2,pat:5", curve_grid = "0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  double curve_eps = 1e-6;
  auto* curve_cmd = app.add_subcommand("curve", "Single-pixel loss and weight versus true-class probability");
  curve_cmd->add_option("--methods", curve_methods,
                        "Comma list of method:param with method in focal, pat, pat-literal");
  curve_cmd->add_option("--p-grid", curve_grid, "Comma list of probabilities in (0,1)");
  curve_cmd->add_option("--epsilon", curve_eps, "PAT constant epsilon");

  // gradcheck
  GradcheckOptions gopt;
  std::string gc_kinds = "all";
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  gc_cmd->add_option("--kinds", gc_kinds, "Comma list of loss kinds or 'all'");
  gc_cmd->add_option("--trials", gopt.trials, "Random instances per configuration");
  gc_cmd->add_option("--seed", gopt.seed, "Seed");
  gc_cmd->add_flag("--inject-fault", gopt.inject_fault, "Corrupt analytic gradients (negative control)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      if (gen_shapes == "rectangles") synth.shapes = ShapeKind::Rectangles;
      if (gen_shapes == "ellipses") synth.shapes = ShapeKind::Ellipses;
      return cmd_gen(synth, gen_freqs, gen_out, out, err);
    }

    if (train_cmd->parsed()) {
      TrainConfig cfg = train_config_path.empty() ? TrainConfig{} : load_train_config(train_config_path);
      cfg.loss = train_loss.resolve(cfg.loss);
      if (!train_dataset.empty()) cfg.dataset_dir = train_dataset;
      if (!train_out.empty()) cfg.output_dir = train_out;
      if (o_opt->count()) cfg.optimizer.kind = parse_optimizer_kind(train_opt);
      if (o_lr->count()) cfg.optimizer.lr = tcfg.optimizer.lr;
      if (o_mom->count()) cfg.optimizer.momentum = tcfg.optimizer.momentum;
      if (o_batch->count()) cfg.batch_size = tcfg.batch_size;
      if (o_steps->count()) cfg.steps = tcfg.steps;
      if (o_every->count()) cfg.eval_every = tcfg.eval_every;
      if (o_seed->count()) cfg.seed = tcfg.seed;
      if (o_hidden->count()) {
        cfg.hidden.clear();
        for (double h : parse_doubles(train_hidden, "--hidden")) {
          if (!(h >= 1.0) || h != static_cast<double>(static_cast<std::size_t>(h))) {
            throw Error("--hidden: widths must be positive integers");
          }
          cfg.hidden.push_back(static_cast<std::size_t>(h));
        }
      }
      if (cfg.dataset_dir.empty()) throw Error("train: --dataset (or \"dataset\" in --config) is required");
      if (cfg.output_dir.empty()) throw Error("train: --out (or \"out\" in --config) is required");
      cfg.validate();
      print_resolved(err, "train", json::parse(to_json(cfg)), cfg.seed);
      const TrainResult r = train(cfg);
      out << eval_csv_header(r.report.per_class_iou.size())
          << eval_csv_row(to_string(cfg.loss.kind), cfg.seed, r.report);
      return kOk;
    }

    if (eval_cmd->parsed()) {
      print_resolved(err, "eval",
                     {{"checkpoint", eval_ckpt},
                      {"dataset", eval_dataset},
                      {"split", eval_split},
                      {"method", eval_method}},
                     eval_seed);
      const Dataset ds = load_dataset(eval_dataset);
      const EvalReport r = evaluate(std::filesystem::path(eval_ckpt), ds, parse_split(eval_split));
      out << eval_csv_header(r.per_class_iou.size()) << eval_csv_row(eval_method, eval_seed, r);
      return kOk;
    }

    if (bench_cmd->parsed()) {
      const auto dims = parse_doubles(bench_shape, "--shape");
      if (dims.size() != 4) throw Error("--shape: expected B,L,H,W");
      for (double d : dims) {
        if (!(d >= 1.0) || d != static_cast<double>(static_cast<std::size_t>(d))) {
          throw Error("--shape: dimensions must be positive integers");
        }
      }
      bopt.shape = {static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                    static_cast<std::size_t>(dims[2]), static_cast<std::size_t>(dims[3])};
      bopt.normalize_by_mask_size = bench_norm == "on";
      print_resolved(err, "bench",
                     {{"shape", dims},
                      {"reps", bopt.reps},
                      {"warmup", bopt.warmup},
                      {"normalize_mask_size", bench_norm}},
                     bopt.seed);
      const BenchReport rep = bench_losses(bopt);
      out << format_bench_csv(rep);
      for (const auto& row : rep.rows) {
        if (row.noisy) err << "warning: timing for " << to_string(row.kind) << " is noisy (std/mean > 0.25)\n";
      }
      return kOk;
    }

    if (curve_cmd->parsed()) {
      std::vector<CurveMethod> methods;
      for (const auto& item : split_list(curve_methods)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw Error("--methods: expected method:param, got \"" + item + "\"");
        const std::string name = item.substr(0, colon);
        CurveMethod m;
        m.param = parse_doubles(item.substr(colon + 1), "--methods").at(0);
        if (name == "focal") {
          m.kind = LossKind::Focal;
        } else if (name == "pat") {
          m.kind = LossKind::PAT;
        } else if (name == "pat-literal") {
          m.kind = LossKind::PAT;
          m.variant = BetaVariant::Literal;
        } else {
          throw Error("--methods: unknown method \"" + name + "\" (expected focal, pat or pat-literal)");
        }
        methods.push_back(m);
      }
      const auto grid = parse_doubles(curve_grid, "--p-grid");
      print_resolved(err, "curve", {{"methods", curve_methods}, {"p_grid", grid}, {"epsilon", curve_eps}}, 0);
      out << format_curve_csv(weighting_curve(methods, grid, curve_eps));
      return kOk;
    }

    if (gc_cmd->parsed()) {
      if (gc_kinds != "all") {
        gopt.kinds.clear();
        for (const auto& k : split_list(gc_kinds)) gopt.kinds.push_back(parse_loss_kind(k));
      }
      print_resolved(err, "gradcheck",
                     {{"kinds", gc_kinds}, {"trials", gopt.trials}, {"inject_fault", gopt.inject_fault}},
                     gopt.seed);
      const GradcheckReport rep = run_gradcheck(gopt);
      out << format_gradcheck_report(rep);
      if (!rep.passed()) {
        err << "gradcheck: FAILED\n";
        return kRuntime;
      }
      return kOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace ltseg::cli
