// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "akt/attention.hpp"
#include "akt/checkpoint.hpp"
#include "akt/grad_check.hpp"
#include "akt/kan.hpp"
#include "akt/matching.hpp"
#include "akt/metrics.hpp"
#include "akt/model.hpp"
#include "akt/synthfield.hpp"
#include "akt/training.hpp"

using namespace akt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr std::size_t kGradMinProbes = 100;
constexpr double kGradBudgetS = 60.0;
constexpr int kHungarianTrials = 1000;
constexpr double kHungarianBudgetS = 30.0;
constexpr std::size_t kPauDraws = 1'000'000;
constexpr double kSiluFitTol = 0.1;
constexpr double kUnityTol = 1e-12;
constexpr int kUnityPoints = 10'000;
constexpr double kPaaRatioMax = 2.5;
constexpr double kMhaRatioMin = 3.0;
constexpr std::size_t kBenchRuns = 20;
constexpr double kBenchBudgetS = 120.0;
constexpr double kSpacingPxTol = 0.5;
constexpr double kSpacingRmseCm = 0.1;
constexpr double kSpacingR2 = 0.999;
constexpr double kSpacingBudgetS = 10.0;
constexpr double kF1AtTenMin = 80.0;
constexpr double kEndToEndBudgetS = 15.0 * 60.0;

int g_failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " " << id << " " << name << ": " << detail << std::endl;
  if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi, bool grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

void fill(Tensor& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& x : t.mutable_data()) x = u(rng);
}

std::vector<Tensor> tensors_of(const ParamList& ps, std::vector<Tensor> extra = {}) {
  for (const auto& p : ps) extra.push_back(p.tensor);
  return extra;
}

struct Proc {
  int code = -1;
  std::string out;
};

Proc run_cli(const std::string& args) {
  const std::string cmd = std::string(AKT_CLI_PATH) + " " + args;
  Proc r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> m;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (!fs::exists(b / e.path().filename())) return false;
    if (read_bytes(e.path()) != read_bytes(b / e.path().filename())) return false;
    ++n;
  }
  return n == static_cast<std::size_t>(std::distance(fs::directory_iterator(b), fs::directory_iterator{}));
}

void gradient_suite() {
  const auto t0 = Clock::now();
  Rng rng(101);
  struct Row {
    std::string name;
    GradCheckReport r;
  };
  std::vector<Row> rows;

  {
    PauParams p = PauParams::silu_fit();
    fill(p.numerator, rng, -1.0, 1.0);
    fill(p.denominator, rng, -1.0, 1.0);
    Tensor x = random_tensor({100}, rng, -3, 3);
    rows.push_back({"pau", grad_check([&] { return sum(pow(pau_eval(x, p), 2.0)); },
                                      {p.numerator, p.denominator, p.scale, x}, kGradEps)});
  }
  {
    KanLinearLayer layer = KanLinearLayer::init(4, 5, rng);
    fill(layer.coeffs, rng, -1, 1);
    Tensor x = random_tensor({6, 4}, rng, -1.2, 1.2);
    ParamList ps;
    layer.collect("kan", ps);
    Tensor w = random_tensor({6, 5}, rng, -1, 1, false);
    rows.push_back({"kan_linear", grad_check([&] { return sum(kan_linear_forward(x, layer) * w); },
                                             tensors_of(ps, {x}), kGradEps)});
  }
  {
    PkanBlock block = PkanBlock::init(8, 8, 4, true, rng);
    fill(block.spline_coeffs, rng, -0.5, 0.5);
    fill(block.numerators, rng, -0.5, 0.5);
    fill(block.denominator, rng, -0.5, 0.5);
    Tensor x = random_tensor({5, 8}, rng, -1, 1);
    ParamList ps;
    block.collect("pkan", ps);
    Tensor w = random_tensor({5, 8}, rng, -1, 1, false);
    rows.push_back(
        {"pkan", grad_check([&] { return sum(pkan_forward(x, block) * w); }, tensors_of(ps, {x}), kGradEps)});
  }
  {
    PaaParams p = PaaParams::init(8, rng, GateOrder::kSaCa, FeedForwardKind::kPkan, 4, true);
    fill(std::get<PkanBlock>(p.ffn.block).spline_coeffs, rng, -0.5, 0.5);
    Tensor x = random_tensor({6, 8}, rng, -1, 1);
    ParamList ps;
    p.collect("paa", ps);
    Tensor w = random_tensor({6, 8}, rng, -1, 1, false);
    rows.push_back({"paa", grad_check([&] { return sum(paa_forward(x, p) * w); }, tensors_of(ps, {x}), kGradEps)});
  }
  {
    Tensor logits = random_tensor({60, 2}, rng, -2, 2);
    Tensor conf = random_tensor({60}, rng, -2, 2);
    std::vector<Point> gt;
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int i = 0; i < 25; ++i) gt.push_back({u(rng), u(rng)});
    rows.push_back({"training_loss",
                    grad_check([&] { return training_loss(sigmoid(logits), sigmoid(conf), gt).total; }, {logits, conf},
                               kGradEps)});
  }

  const double elapsed = seconds_since(t0);
  bool ok = elapsed < kGradBudgetS;
  std::string detail;
  for (const auto& row : rows) {
    ok = ok && row.r.entries >= kGradMinProbes && row.r.max_rel_error < kGradTol;
    detail += row.name + " " + num(row.r.max_rel_error, 3) + "/" + std::to_string(row.r.entries) + ", ";
  }
  detail += "max rel err < " + num(kGradTol) + " over >= " + std::to_string(kGradMinProbes) + " probes, " +
            num(elapsed, 3) + " s";
  report(1, "gradient suite", ok, detail);
}

double brute_force(const CostMatrix& c) {
  std::vector<std::size_t> cols(c.cols);
  std::iota(cols.begin(), cols.end(), 0);
  double best = INFINITY;
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < c.rows; ++r) total += c.at(r, cols[r]);
    best = std::min(best, total);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

void hungarian_exactness() {
  const auto t0 = Clock::now();
  Rng rng(202);
  // Multiples of 1/8 keep every partial sum exact in float64.
  std::uniform_int_distribution<int> eighths(-160, 160);
  std::uniform_int_distribution<std::size_t> row_dist(1, 7), extra_dist(0, 1);
  int mismatches = 0;
  for (int t = 0; t < kHungarianTrials; ++t) {
    const std::size_t rows = row_dist(rng);
    const std::size_t cols = rows + extra_dist(rng);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = eighths(rng) / 8.0;
    const CostMatrix c(rows, cols, std::move(v));
    if (hungarian(c).total_cost != brute_force(c)) ++mismatches;
  }
  const double elapsed = seconds_since(t0);
  report(2, "hungarian exactness", mismatches == 0 && elapsed < kHungarianBudgetS,
         std::to_string(kHungarianTrials - mismatches) + "/" + std::to_string(kHungarianTrials) +
             " equal to brute force, " + num(elapsed, 3) + " s");
}

void match_cost_semantics() {
  const double a = match_cost({0.2, 0.6}, 0.9, {0.2, 0.6});
  const double b = match_cost({0.0, 0.0}, 0.0, {0.3, 0.4});
  const bool ok = a == -0.9 && std::abs(b - 0.7) <= 1e-15;
  report(3, "match cost", ok, "coincident@0.9 -> " + num(a, 17) + ", (0,0)->(0.3,0.4) -> " + num(b, 17));
}

double silu_scalar(double x) { return x / (1.0 + std::exp(-x)); }

void pau_safety() {
  Rng rng(404);
  std::uniform_real_distribution<double> u(-100.0, 100.0), coeff(-2.0, 2.0);
  std::vector<double> b(4);
  double lowest = INFINITY;
  for (std::size_t i = 0; i < kPauDraws; ++i) {
    if (i % 1000 == 0) {
      for (double& v : b) v = coeff(rng);
    }
    lowest = std::min(lowest, pau_denominator(u(rng), b));
  }
  for (std::size_t i = 0; i < 1000; ++i) lowest = std::min(lowest, pau_denominator(u(rng), silu_fit_denominator()));
  double worst = 0.0;
  for (int i = 0; i <= 60000; ++i) {
    const double x = -3.0 + 6.0 * i / 60000.0;
    worst = std::max(worst, std::abs(pau_value(x, silu_fit_numerator(), silu_fit_denominator(), 1.0) - silu_scalar(x)));
  }
  report(4, "PAU safety", lowest >= 1.0 && worst < kSiluFitTol,
         "min denominator " + num(lowest, 6) + " over " + std::to_string(kPauDraws) + " draws, SiLU fit max err " +
             num(worst, 4) + " < " + num(kSiluFitTol));
}

void partition_of_unity() {
  Rng rng(505);
  double worst = 0.0;
  bool nonneg = true;
  for (std::size_t g = 3; g <= 12; ++g) {
    for (std::size_t k : {2u, 3u}) {
      const BSplineGrid grid = BSplineGrid::uniform(-1.0, 1.0, g, k);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (int i = 0; i < kUnityPoints; ++i) {
        const double x = i == 0 ? -1.0 : (i == 1 ? 1.0 : u(rng));
        const auto b = grid.basis(x);
        for (double v : b) nonneg = nonneg && v >= 0.0;
        worst = std::max(worst, std::abs(std::accumulate(b.begin(), b.end(), 0.0) - 1.0));
      }
    }
  }
  report(5, "partition of unity", nonneg && worst <= kUnityTol,
         "max |sum - 1| = " + num(worst, 3) + " over G 3..12, k 2/3, " + std::to_string(kUnityPoints) + " points each");
}

void attention_scaling() {
  const auto t0 = Clock::now();
  const std::vector<std::size_t> tokens{512, 1024};
  const auto rows = run_bench(tokens, 64, 4, kBenchRuns, 606);
  const double paa_ratio = rows[1].paa_ms / rows[0].paa_ms;
  const double mha_ratio = rows[1].mha_ms / rows[0].mha_ms;
  const double elapsed = seconds_since(t0);

  // Analytic model FLOPs at full survey resolution, same dims.
  ModelConfig full;
  full.height = 1536;
  full.width = 2048;
  ModelConfig full_mha = full;
  full_mha.encoder_attention = AttentionKind::kMha;
  const double paa_flops = count_params_flops(full).flops();
  const double mha_flops = count_params_flops(full_mha).flops();

  const bool ok = paa_ratio < kPaaRatioMax && mha_ratio > kMhaRatioMin && paa_flops < mha_flops && elapsed < kBenchBudgetS;
  report(6, "attention scaling", ok,
         "N 512->1024 d 64: paa x" + num(paa_ratio, 3) + " (< " + num(kPaaRatioMax) + "), mha x" + num(mha_ratio, 3) +
             " (> " + num(kMhaRatioMin) + "); model FLOPs at 1536x2048 paa " + num(paa_flops, 6) + " < mha " +
             num(mha_flops, 6) + "; " + num(elapsed, 3) + " s");
}

void metrics_protocol() {
  const std::vector<Point> gt{{10, 10}, {50, 20}, {80, 90}};
  const LocalizationReport perfect = localization_metrics(gt, gt, MetricConfig{});
  const bool perfect_ok =
      perfect.avg_precision == 100.0 && perfect.avg_recall == 100.0 && perfect.avg_f1 == 100.0;
  const LocalizationReport ex = localization_metrics(std::vector<Point>{{0, 3}, {100, 100}},
                                                     std::vector<Point>{{0, 0}, {10, 0}}, MetricConfig{});
  const ThresholdScore& s = ex.at_alpha(3);
  const bool example_ok = s.precision == 50.0 && s.recall == 50.0 && s.f1 == 50.0;
  const double cm = px_to_cm(10.0, 2.38);
  const bool unit_ok = std::abs(cm - 2.38) <= 1e-15;
  report(7, "metrics protocol", perfect_ok && example_ok && unit_ok,
         "perfect avp/avr/avf " + num(perfect.avg_precision) + "/" + num(perfect.avg_recall) + "/" +
             num(perfect.avg_f1) + ", example at alpha 3 P/R/F " + num(s.precision) + "/" + num(s.recall) + "/" +
             num(s.f1) + ", 10 px -> " + num(cm, 17) + " cm");
}

void spacing_pipeline() {
  const auto t0 = Clock::now();
  FieldConfig c;
  c.rows = 2;
  c.seeds_per_plot = 80;
  c.jitter_m = 0.0;
  c.emergence = 0.8;  // missing plants give reference distances more than one value
  c.width = 2688;
  c.height = 512;
  c.seed = 808;
  const FieldScene scene = generate_field(c);
  const auto points = scene.ground_truth();
  const SpacingReport est = spacing_estimate(points, c.gsd_mm, c.row_spacing_px());

  // Generator ground truth: consecutive emerged plants, lattice distance.
  std::map<std::pair<std::size_t, std::size_t>, double> reference;
  for (auto [a, b] : scene.reference_pairs()) {
    const double slots = static_cast<double>(scene.plants[b].slot - scene.plants[a].slot);
    reference[{a, b}] = slots * c.interval_m * 100.0;
  }
  std::vector<double> e, r;
  double worst_px = 0.0;
  bool paired = est.pairs.size() == reference.size();
  const double px_per_cm = 10.0 / c.gsd_mm;
  for (std::size_t i = 0; i < est.pairs.size(); ++i) {
    auto [a, b] = est.pairs[i];
    if (a > b) std::swap(a, b);
    const auto it = reference.find({a, b});
    if (it == reference.end()) {
      paired = false;
      continue;
    }
    e.push_back(est.distances_cm[i]);
    r.push_back(it->second);
    worst_px = std::max(worst_px, std::abs(est.distances_cm[i] - it->second) * px_per_cm);
  }
  const SpacingAccuracy acc = spacing_accuracy(e, r);
  const double elapsed = seconds_since(t0);
  const double r2 = acc.r_squared.value_or(NAN);
  const bool ok = paired && !e.empty() && worst_px <= kSpacingPxTol && acc.rmse < kSpacingRmseCm &&
                  acc.r_squared && r2 > kSpacingR2 && elapsed < kSpacingBudgetS;
  report(8, "spacing pipeline", ok,
         std::to_string(e.size()) + " pairs, interval " + num(c.interval_px(), 6) + " px, max dev " +
             num(worst_px, 3) + " px, rmse " + num(acc.rmse, 3) + " cm, r2 " + num(r2, 8) + ", " + num(elapsed, 3) +
             " s");
}

void end_to_end(const fs::path& work) {
  const auto t0 = Clock::now();
  const fs::path data = work / "e2e_data", run = work / "e2e_run";
  const Proc gen = run_cli("--seed 3 --out " + data.string() + " generate --scenes 100");
  const Proc train = run_cli("--seed 3 --out " + run.string() + " train --data " + data.string() + " --steps 500");
  const Proc eval = run_cli("--out " + run.string() + " eval --data " + data.string() + " --split test");
  const double elapsed = seconds_since(t0);
  if (gen.code != 0 || train.code != 0 || eval.code != 0) {
    report(9, "end-to-end learning", false, "cli exit codes " + std::to_string(gen.code) + "/" +
                                                std::to_string(train.code) + "/" + std::to_string(eval.code));
    return;
  }
  std::map<std::size_t, double> losses;
  std::istringstream log(read_bytes(run / "loss.csv"));
  std::string line;
  std::getline(log, line);
  while (std::getline(log, line)) {
    const auto comma = line.find(',');
    losses[std::stoul(line.substr(0, comma))] = std::stod(line.substr(comma + 1));
  }
  double f1_at_10 = -1.0;
  std::istringstream rep(eval.out);
  while (std::getline(rep, line)) {
    if (line.rfind("10,", 0) == 0) f1_at_10 = std::stod(line.substr(line.rfind(',') + 1));
  }
  auto m = key_values(eval.out);
  const bool have = losses.count(0) && losses.count(200);
  const bool ok = have && losses[200] < losses[0] && f1_at_10 >= kF1AtTenMin && elapsed < kEndToEndBudgetS;
  report(9, "end-to-end learning", ok,
         "test F1@10 " + num(f1_at_10, 4) + "% (>= " + num(kF1AtTenMin) + "), avf " + m["avf"].substr(0, 6) +
             ", loss step0 " + (have ? num(losses[0], 4) : "na") + " step200 " + (have ? num(losses[200], 4) : "na") +
             " step" + std::to_string(losses.empty() ? 0 : losses.rbegin()->first) + " " +
             (losses.empty() ? "na" : num(losses.rbegin()->second, 4)) + ", " + num(elapsed / 60.0, 3) + " min");
}

void determinism(const fs::path& work) {
  const std::string tiny =
      " --set model.height=64 --set model.width=64 --set field.height=64 --set field.width=64"
      " --set model.backbone_channels=16 --set model.embed=16 --set model.queries=8 --set model.kan_hidden=8"
      " --set model.encoder_layers=1 --set model.decoder_layers=1 --set train.batch_size=2"
      " --set train.checkpoint_every=2 --set train.augment=rotate,hflip,gauss_noise,cutmix";
  const fs::path a = work / "det_a", b = work / "det_b";
  const bool gen_ok = run_cli("--seed 5 --out " + a.string() + tiny + " generate --scenes 12").code == 0 &&
                      run_cli("--seed 5 --out " + b.string() + tiny + " generate --scenes 12").code == 0;
  const bool gen_same = gen_ok && same_tree(a, b);

  const fs::path run = work / "det_run";
  const std::string train_args = "--seed 5 --out " + run.string() + tiny + " train --data " + a.string() + " --steps 5";
  const Proc t1 = run_cli(train_args);
  const fs::path first = work / "det_first";
  std::error_code ec;
  fs::rename(run, first, ec);
  const Proc t2 = run_cli(train_args);
  const bool train_same = t1.code == 0 && t2.code == 0 && !ec && t1.out == t2.out && same_tree(first, run);

  bool ckpt_same = false;
  if (t2.code == 0) {
    const Checkpoint ck = load_checkpoint(run / "checkpoint.akt");
    save_checkpoint(work / "resaved.akt", ck);
    ckpt_same = read_bytes(work / "resaved.akt") == read_bytes(run / "checkpoint.akt") &&
                serialize_checkpoint(deserialize_checkpoint(serialize_checkpoint(ck), "memory")) ==
                    serialize_checkpoint(ck);
  }
  report(10, "determinism and persistence", gen_same && train_same && ckpt_same,
         std::string("generate ") + (gen_same ? "identical" : "differs") + ", train " +
             (train_same ? "identical" : "differs") + ", checkpoint save/load/save " +
             (ckpt_same ? "identical" : "differs"));
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("akt_acceptance_" + std::to_string(std::random_device{}()));
  fs::remove_all(work);
  fs::create_directories(work);
  try {
    gradient_suite();
    hungarian_exactness();
    match_cost_semantics();
    pau_safety();
    partition_of_unity();
    attention_scaling();
    metrics_protocol();
    spacing_pipeline();
    end_to_end(work);
    determinism(work);
  } catch (const std::exception& e) {
    std::cout << "FAIL aborted: " << e.what() << std::endl;
    ++g_failures;
  }
  fs::remove_all(work);
  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
