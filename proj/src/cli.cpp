#include "akt/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "akt/checkpoint.hpp"
#include "akt/config.hpp"
#include "akt/dataset.hpp"
#include "akt/error.hpp"
#include "akt/training.hpp"

namespace akt {

namespace {

namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::string> sets;
  std::size_t scenes = 0;
  std::string data;
  std::size_t steps = 0;
  std::string checkpoint;
  std::string split = "test";
  bool gt_as_pred = false;
  bool verbose = false;
  std::size_t runs = 20;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::vector<std::size_t> tokens{128, 256, 512, 1024};
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

/// Precedence: `base`, then the config file, then --set, then dedicated flags.
RunConfig resolve(const CLI::App& app, const CLI::App& sub, const Flags& f, RunConfig base = {}) {
  if (!f.config.empty()) base.apply_file(f.config);
  for (const std::string& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    base.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (app.count("--seed")) base.seed = f.seed;
  if (app.count("--out")) base.out_dir = f.out;
  if (sub.get_option_no_throw("--scenes") && sub.count("--scenes")) base.scenes = f.scenes;
  if (sub.get_option_no_throw("--data") && sub.count("--data")) base.data_dir = f.data;
  if (sub.get_option_no_throw("--steps") && sub.count("--steps")) {
    base.train.steps = f.steps;
    base.train.epochs = 0;
  }
  base.finalize();
  return base;
}

void sync_model_to_field(RunConfig& cfg) {
  if (cfg.model.height != cfg.field.height || cfg.model.width != cfg.field.width) {
    throw ConfigError("model input " + std::to_string(cfg.model.height) + "x" + std::to_string(cfg.model.width) +
                      " differs from field size " + std::to_string(cfg.field.height) + "x" +
                      std::to_string(cfg.field.width));
  }
}

int cmd_generate(const RunConfig& cfg, const CLI::App& app, std::ostream& out) {
  const fs::path dir = app.count("--out") ? fs::path(cfg.out_dir) : fs::path(cfg.data_dir);
  const SplitCounts counts = write_dataset(dir, cfg.field, cfg.scenes);
  out << "dir=" << dir.string() << "\nscenes=" << cfg.scenes << "\ntrain=" << counts.train << "\nval=" << counts.val
      << "\ntest=" << counts.test << "\n";
  return 0;
}

int cmd_train(RunConfig& cfg, const Flags& f, std::ostream& out, std::ostream& err) {
  sync_model_to_field(cfg);
  const auto items = load_split(cfg.data_dir, Split::kTrain);
  AktModel model = AktModel::init(cfg.model);
  const TrainResult r = train_model(cfg, model, items, cfg.out_dir, f.verbose ? &err : nullptr);
  char buf[64];
  out << "train_images=" << items.size() << "\nsteps=" << r.losses.size() << "\n";
  if (!r.losses.empty()) {
    std::snprintf(buf, sizeof buf, "%.17g", r.losses.front().loss);
    out << "initial_loss=" << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", r.losses.back().loss);
    out << "final_loss=" << buf << "\n";
  }
  out << "loss_log=" << (fs::path(cfg.out_dir) / "loss.csv").string() << "\ncheckpoint=" << r.checkpoint.string()
      << "\n";
  return 0;
}

int cmd_eval(const CLI::App& app, const CLI::App& sub, const Flags& f, std::ostream& out) {
  RunConfig base;
  std::optional<Checkpoint> ckpt;
  if (!f.gt_as_pred) {
    RunConfig probe = resolve(app, sub, f);
    const fs::path path = f.checkpoint.empty() ? fs::path(probe.out_dir) / "checkpoint.akt" : fs::path(f.checkpoint);
    ckpt = load_checkpoint(path);
    base.apply_text(ckpt->config, path.string() + " (config echo)");
  }
  const RunConfig cfg = resolve(app, sub, f, base);
  const Split split = parse_split(f.split);
  const auto items = load_split(cfg.data_dir, split);
  EvalReport report;
  if (ckpt) {
    AktModel model = AktModel::init(cfg.model);
    apply_checkpoint(*ckpt, model.parameters());
    report = evaluate(cfg, &model, items);
  } else {
    report = evaluate(cfg, nullptr, items);
  }
  out << format_eval(report);
  return 0;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"AKT plant-point localizer: synthetic data, training, evaluation and benchmarks", "akt"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "Flat 'section.key = value' config file")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "Run seed");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--set", f.sets, "Config override key=value (repeatable)");

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset with split manifests");
  gen->add_option("--scenes", f.scenes, "Number of scenes");

  auto* train = app.add_subcommand("train", "Train on the training split");
  train->add_option("--data", f.data, "Dataset directory");
  train->add_option("--steps", f.steps, "Optimizer steps");
  train->add_flag("--verbose", f.verbose, "Per-step progress on stderr");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  eval->add_option("--data", f.data, "Dataset directory");
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint file (default <out>/checkpoint.akt)");
  eval->add_option("--split", f.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_flag("--gt-as-pred", f.gt_as_pred, "Score the ground truth as predictions");

  auto* bench = app.add_subcommand("bench", "Time PAA against MHA across token counts");
  bench->add_option("--runs", f.runs, "Timed runs per point")->check(CLI::PositiveNumber);
  bench->add_option("--dim", f.dim, "Token width")->check(CLI::PositiveNumber);
  bench->add_option("--heads", f.heads, "MHA heads")->check(CLI::PositiveNumber);
  bench->add_option("--tokens", f.tokens, "Token counts")->delimiter(',');

  auto* flops = app.add_subcommand("flops", "Analytic parameter and FLOPs counts of the configured model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 2;
  }

  if (gen->parsed()) {
    const RunConfig cfg = resolve(app, *gen, f);
    return cmd_generate(cfg, app, out);
  }
  if (train->parsed()) {
    RunConfig cfg = resolve(app, *train, f);
    return cmd_train(cfg, f, out, err);
  }
  if (eval->parsed()) return cmd_eval(app, *eval, f, out);
  if (bench->parsed()) {
    const RunConfig cfg = resolve(app, *bench, f);
    out << format_bench(run_bench(f.tokens, f.dim, f.heads, f.runs, cfg.seed));
    return 0;
  }
  if (flops->parsed()) {
    const RunConfig cfg = resolve(app, *flops, f);
    out << format_flops(cfg.model);
    return 0;
  }
  return 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(argc, argv, out, err);
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}

}  // namespace akt
