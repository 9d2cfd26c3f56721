#include "akt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "akt/checkpoint.hpp"
#include "akt/error.hpp"
#include "akt/matching.hpp"
#include "akt/optim.hpp"

namespace akt {

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string rng_state(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

void check_image(const ModelConfig& m, const Tensor& image, const std::string& name) {
  if (image.rank() != 3 || image.dim(0) != m.height || image.dim(1) != m.width || image.dim(2) != 3) {
    throw DimensionError(name + ": image " + shape_str(image.shape()) + " does not match model input " +
                         std::to_string(m.height) + "x" + std::to_string(m.width) + "x3");
  }
}

/// Index pairs (pred, gt) of the minimum-distance assignment within `radius`.
std::vector<std::pair<std::size_t, std::size_t>> close_pairs(std::span<const Point> pred, std::span<const Point> gt,
                                                             double radius) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (pred.empty() || gt.empty()) return out;
  const bool gt_rows = gt.size() <= pred.size();
  std::span<const Point> rows = gt_rows ? gt : pred;
  std::span<const Point> cols = gt_rows ? pred : gt;
  std::vector<double> d;
  d.reserve(rows.size() * cols.size());
  for (const Point& a : rows) {
    for (const Point& b : cols) d.push_back(std::hypot(a.x - b.x, a.y - b.y));
  }
  CostMatrix cost(rows.size(), cols.size(), std::move(d));
  const MatchResult match = hungarian(cost);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t c = match.assignment[r];
    if (cost.at(r, c) > radius) continue;
    out.push_back(gt_rows ? std::pair{c, r} : std::pair{r, c});
  }
  return out;
}

}  // namespace

std::size_t planned_steps(const TrainConfig& cfg, std::size_t train_items) {
  if (cfg.epochs == 0) return cfg.steps;
  const std::size_t per_epoch = (train_items + cfg.batch_size - 1) / cfg.batch_size;
  return cfg.epochs * per_epoch;
}

double batch_loss_backward(const AktModel& model, std::span<const Sample> batch) {
  if (batch.empty()) throw UsageError("empty training batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const Sample& s : batch) {
    check_image(model.config, s.image, "training sample");
    const double w = static_cast<double>(s.image.dim(1));
    const double h = static_cast<double>(s.image.dim(0));
    std::vector<Point> targets;
    targets.reserve(s.points.size());
    for (const Point& p : s.points) targets.push_back({p.x / w, p.y / h});
    PointPredictions pred = akt_forward(s.image, model);
    LossTerms loss = training_loss(pred.coords, pred.conf, targets);
    const double value = loss.total.item();
    if (!std::isfinite(value)) throw NumericError("non-finite loss");
    total += value * inv;
    (loss.total * inv).backward();
  }
  return total;
}

TrainResult train_model(const RunConfig& cfg, AktModel& model, const std::vector<DatasetItem>& items,
                        const std::filesystem::path& out_dir, std::ostream* progress) {
  if (items.empty()) throw UsageError("training split is empty");
  for (const auto& item : items) check_image(model.config, item.image, item.name);
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir / "loss.csv", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out_dir / "loss.csv").string());
  log << "step,loss\n";

  const ParamList params = model.parameters();
  Adam adam(params, cfg.optim);
  Rng rng(derive_seed(cfg.seed, 2));
  const std::string config_text = cfg.to_text();
  const std::size_t steps = planned_steps(cfg.train, items.size());
  const std::size_t batch = std::min(cfg.train.batch_size, items.size());

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::bernoulli_distribution coin(0.5);

  TrainResult result;
  const auto start = Clock::now();
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<Sample> samples;
    samples.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const DatasetItem& item = items[order[cursor++]];
      Sample s{item.image, item.points};
      for (AugmentOp op : cfg.train.augment) {
        if (!coin(rng)) continue;
        const DatasetItem& donor = items[std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng)];
        const Sample donor_sample{donor.image, donor.points};
        s = augment(s, op, rng, &donor_sample);
      }
      samples.push_back(std::move(s));
    }

    adam.zero_grad();
    double loss = 0.0;
    try {
      loss = batch_loss_backward(model, samples);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    const double norm = adam.step();
    if (!std::isfinite(norm)) throw NumericError("step " + std::to_string(step) + ": non-finite gradient norm");

    result.losses.push_back({step, loss});
    log << step << "," << fmt(loss) << "\n";
    log.flush();
    if (progress) {
      const double secs = std::chrono::duration<double>(Clock::now() - start).count();
      *progress << "step=" << step << " loss=" << fmt_short(loss) << " grad_norm=" << fmt_short(norm)
                << " elapsed_s=" << fmt_short(secs) << "\n";
    }
    if (cfg.train.checkpoint_every > 0 && (step + 1) % cfg.train.checkpoint_every == 0 && step + 1 < steps) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06zu.akt", step + 1);
      save_checkpoint(out_dir / name, make_checkpoint(params, config_text, step + 1, rng_state(rng)));
    }
  }
  result.checkpoint = out_dir / "checkpoint.akt";
  save_checkpoint(result.checkpoint, make_checkpoint(params, config_text, steps, rng_state(rng)));
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

PointSet predict_points(const AktModel& model, const Tensor& image, double conf_cutoff) {
  check_image(model.config, image, "input");
  NoGradGuard guard;
  const PointPredictions pred = akt_forward(image, model);
  const auto coords = pred.coords.data();
  const auto conf = pred.conf.data();
  const double w = static_cast<double>(image.dim(1));
  const double h = static_cast<double>(image.dim(0));
  PointSet out;
  for (std::size_t j = 0; j < pred.conf.numel(); ++j) {
    if (conf[j] <= conf_cutoff) continue;
    out.points.push_back({coords[2 * j] * w, coords[2 * j + 1] * h});
    out.confidences.push_back(conf[j]);
  }
  return out;
}

EvalReport evaluate(const RunConfig& cfg, const AktModel* model, const std::vector<DatasetItem>& items) {
  cfg.metric.validate();
  std::vector<std::vector<Point>> predictions(items.size());
  if (model) {
    const std::size_t workers =
        std::max<std::size_t>(1, std::min<std::size_t>(items.size(), std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < items.size(); i += workers) {
            predictions[i] = predict_points(*model, items[i].image, cfg.metric.conf_cutoff).points;
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t i = 0; i < items.size(); ++i) predictions[i] = items[i].points;
  }

  EvalReport report;
  report.images = items.size();
  LocalizationAccumulator acc(cfg.metric);
  std::vector<double> counted, truth, est_cm, ref_cm;
  const double radius = cfg.metric.thresholds.back();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    const auto& pred = predictions[i];
    acc.add(pred, item.points);
    counted.push_back(static_cast<double>(pred.size()));
    truth.push_back(static_cast<double>(item.points.size()));
    if (!item.has_meta || pred.size() < 2) continue;

    std::map<std::pair<std::size_t, std::size_t>, double> reference;
    for (std::size_t k = 0; k < item.meta.pairs.size(); ++k) {
      auto [a, b] = item.meta.pairs[k];
      reference[{std::min(a, b), std::max(a, b)}] = item.meta.distances_cm[k];
    }
    std::vector<std::size_t> gt_of(pred.size(), std::numeric_limits<std::size_t>::max());
    for (auto [p, g] : close_pairs(pred, item.points, radius)) gt_of[p] = g;
    const SpacingReport est = spacing_estimate(pred, item.meta.gsd_mm, item.meta.row_spacing_px);
    for (std::size_t k = 0; k < est.pairs.size(); ++k) {
      const std::size_t ga = gt_of[est.pairs[k].first];
      const std::size_t gb = gt_of[est.pairs[k].second];
      if (ga == std::numeric_limits<std::size_t>::max() || gb == std::numeric_limits<std::size_t>::max()) continue;
      auto it = reference.find({std::min(ga, gb), std::max(ga, gb)});
      if (it == reference.end()) continue;
      est_cm.push_back(est.distances_cm[k]);
      ref_cm.push_back(it->second);
    }
  }
  report.localization = acc.report();
  if (!items.empty()) report.counting = counting_metrics(counted, truth);
  report.spacing_pairs = est_cm.size();
  if (!est_cm.empty()) report.spacing = spacing_accuracy(est_cm, ref_cm);
  return report;
}

std::string format_eval(const EvalReport& report) {
  std::ostringstream out;
  out << "alpha,precision,recall,f1\n";
  for (const auto& s : report.localization.per_alpha) {
    out << fmt(s.alpha) << "," << fmt(s.precision) << "," << fmt(s.recall) << "," << fmt(s.f1) << "\n";
  }
  out << "images=" << report.images << "\n";
  out << "avp=" << fmt(report.localization.avg_precision) << "\n";
  out << "avr=" << fmt(report.localization.avg_recall) << "\n";
  out << "avf=" << fmt(report.localization.avg_f1) << "\n";
  out << "mae=" << fmt(report.counting.mae) << "\n";
  out << "mse=" << fmt(report.counting.mse) << "\n";
  out << "spacing_pairs=" << report.spacing_pairs << "\n";
  out << "rmse_cm=" << (report.spacing ? fmt(report.spacing->rmse) : "na") << "\n";
  out << "r2=" << (report.spacing && report.spacing->r_squared ? fmt(*report.spacing->r_squared) : "na") << "\n";
  return out.str();
}

std::vector<BenchRow> run_bench(std::span<const std::size_t> tokens, std::size_t dim, std::size_t heads,
                                std::size_t runs, std::uint64_t seed) {
  if (runs == 0) throw ConfigError("bench needs at least one run");
  Rng rng(derive_seed(seed, 3));
  const PaaParams paa = PaaParams::init(dim, rng, GateOrder::kSaCa);
  const MhaParams mha = MhaParams::init(dim, heads, rng);
  NoGradGuard guard;
  auto median_ms = [runs](auto&& fn) {
    fn();
    std::vector<double> ms;
    for (std::size_t r = 0; r < runs; ++r) {
      const auto t0 = Clock::now();
      fn();
      ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    return ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  };
  std::vector<BenchRow> rows;
  for (std::size_t n : tokens) {
    std::vector<double> values(n * dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : values) v = normal(rng);
    const Tensor x = Tensor::from({n, dim}, std::move(values));
    BenchRow row;
    row.tokens = n;
    row.paa_ms = median_ms([&] { return paa_forward(x, paa); });
    row.mha_ms = median_ms([&] { return mha_forward(x, mha); });
    row.paa_flops = attention_flops(AttentionKind::kPaa, static_cast<double>(n), static_cast<double>(dim));
    row.mha_flops = attention_flops(AttentionKind::kMha, static_cast<double>(n), static_cast<double>(dim));
    rows.push_back(row);
  }
  return rows;
}

std::string format_bench(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "n,paa_ms,mha_ms,paa_flops,mha_flops,flops_ratio,paa_time_ratio,mha_time_ratio\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << r.tokens << "," << fmt_short(r.paa_ms) << "," << fmt_short(r.mha_ms) << "," << fmt(r.paa_flops) << ","
        << fmt(r.mha_flops) << "," << fmt_short(r.paa_flops / r.mha_flops) << ",";
    if (i == 0) {
      out << "na,na\n";
    } else {
      out << fmt_short(r.paa_ms / rows[i - 1].paa_ms) << "," << fmt_short(r.mha_ms / rows[i - 1].mha_ms) << "\n";
    }
  }
  return out.str();
}

std::string format_flops(const ModelConfig& cfg) {
  ModelConfig twin = cfg;
  twin.encoder_attention =
      cfg.encoder_attention == AttentionKind::kPaa ? AttentionKind::kMha : AttentionKind::kPaa;
  const ParamFlops a = count_params_flops(cfg);
  const ParamFlops b = count_params_flops(twin);
  const ParamFlops& paa = cfg.encoder_attention == AttentionKind::kPaa ? a : b;
  const ParamFlops& mha = cfg.encoder_attention == AttentionKind::kPaa ? b : a;
  std::ostringstream out;
  out << "height=" << cfg.height << "\nwidth=" << cfg.width << "\ntokens=" << cfg.tokens() << "\n";
  out << "encoder_attention=" << to_string(cfg.encoder_attention) << "\n";
  out << "params=" << a.params() << "\n";
  out << "backbone_params=" << a.backbone_params << "\nencoder_params=" << a.encoder_params
      << "\ndecoder_params=" << a.decoder_params << "\nhead_params=" << a.head_params << "\n";
  out << "flops=" << fmt(a.flops()) << "\n";
  out << "backbone_flops=" << fmt(a.backbone_flops) << "\nencoder_flops=" << fmt(a.encoder_flops)
      << "\ndecoder_flops=" << fmt(a.decoder_flops) << "\nhead_flops=" << fmt(a.head_flops) << "\n";
  out << "paa_encoder_flops=" << fmt(paa.flops()) << "\nmha_encoder_flops=" << fmt(mha.flops()) << "\n";
  out << "paa_over_mha=" << fmt_short(paa.flops() / mha.flops()) << "\n";
  out << "attention_crossover_tokens=" << attention_crossover(cfg.embed) << "\n";
  return out.str();
}

}  // namespace akt
