#include "akt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "akt/error.hpp"
#include "akt/matching.hpp"

namespace akt {

void MetricConfig::validate() const {
  if (thresholds.empty()) throw ConfigError("at least one distance threshold is required");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0)) throw ConfigError("distance thresholds must be positive");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("distance thresholds must ascend");
  }
  if (!(gsd_mm > 0.0)) throw ConfigError("gsd must be positive");
}

const ThresholdScore& LocalizationReport::at_alpha(double alpha) const {
  for (const ThresholdScore& s : per_alpha) {
    if (s.alpha == alpha) return s;
  }
  throw ConfigError("no score recorded at alpha " + std::to_string(alpha));
}

ThresholdScore score_counts(double alpha, std::size_t tp, std::size_t fp, std::size_t fn) {
  ThresholdScore s{alpha, tp, fp, fn, 0.0, 0.0, 0.0};
  const double t = static_cast<double>(tp);
  const double p = tp + fp == 0 ? 0.0 : t / static_cast<double>(tp + fp);
  const double r = tp + fn == 0 ? 0.0 : t / static_cast<double>(tp + fn);
  s.precision = 100.0 * p;
  s.recall = 100.0 * r;
  s.f1 = p + r == 0.0 ? 0.0 : 100.0 * 2.0 * p * r / (p + r);
  return s;
}

namespace {

/// Distances of the minimum-total-distance one-to-one pairing.
std::vector<double> matched_distances(std::span<const Point> pred, std::span<const Point> gt) {
  if (pred.empty() || gt.empty()) return {};
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
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(cost.at(i, match.assignment[i]));
  return out;
}

void check_points(std::span<const Point> points) {
  for (const Point& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw NumericError("point coordinates must be finite");
  }
}

}  // namespace

LocalizationAccumulator::LocalizationAccumulator(MetricConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  tp_.assign(cfg_.thresholds.size(), 0);
  fp_.assign(cfg_.thresholds.size(), 0);
  fn_.assign(cfg_.thresholds.size(), 0);
}

void LocalizationAccumulator::add(std::span<const Point> pred, std::span<const Point> gt) {
  check_points(pred);
  check_points(gt);
  const std::vector<double> d = matched_distances(pred, gt);
  for (std::size_t a = 0; a < cfg_.thresholds.size(); ++a) {
    const auto tp = static_cast<std::size_t>(
        std::count_if(d.begin(), d.end(), [&](double v) { return v <= cfg_.thresholds[a]; }));
    tp_[a] += tp;
    fp_[a] += pred.size() - tp;
    fn_[a] += gt.size() - tp;
  }
}

LocalizationReport LocalizationAccumulator::report() const {
  LocalizationReport r;
  for (std::size_t a = 0; a < cfg_.thresholds.size(); ++a) {
    r.per_alpha.push_back(score_counts(cfg_.thresholds[a], tp_[a], fp_[a], fn_[a]));
    r.avg_precision += r.per_alpha.back().precision;
    r.avg_recall += r.per_alpha.back().recall;
    r.avg_f1 += r.per_alpha.back().f1;
  }
  const auto n = static_cast<double>(cfg_.thresholds.size());
  r.avg_precision /= n;
  r.avg_recall /= n;
  r.avg_f1 /= n;
  return r;
}

LocalizationReport localization_metrics(std::span<const Point> pred, std::span<const Point> gt,
                                        const MetricConfig& cfg) {
  LocalizationAccumulator acc(cfg);
  acc.add(pred, gt);
  return acc.report();
}

CountingReport counting_metrics(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) {
    throw DimensionError("counting metrics: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(truth.size()) + " images");
  }
  CountingReport r;
  if (predicted.empty()) return r;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - truth[i];
    r.mae += std::abs(e);
    r.mse += e * e;
  }
  r.mae /= static_cast<double>(predicted.size());
  r.mse /= static_cast<double>(predicted.size());
  return r;
}

std::size_t count_confident(std::span<const double> confidences, double cutoff) {
  return static_cast<std::size_t>(
      std::count_if(confidences.begin(), confidences.end(), [&](double c) { return c > cutoff; }));
}

SpacingReport spacing_estimate(std::span<const Point> points, double gsd_mm, double row_spacing_px) {
  if (!(gsd_mm > 0.0)) throw ConfigError("gsd must be positive");
  if (!(row_spacing_px > 0.0)) throw ConfigError("row spacing must be positive");
  check_points(points);
  SpacingReport report;
  const std::size_t n = points.size();
  report.row_of.assign(n, 0);
  if (n < 2) {
    report.row_count = n;
    return report;
  }

  double mx = 0.0, my = 0.0;
  for (const Point& p : points) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const Point& p : points) {
    sxx += (p.x - mx) * (p.x - mx);
    syy += (p.y - my) * (p.y - my);
    sxy += (p.x - mx) * (p.y - my);
  }
  // Dominant eigenvector of the 2x2 scatter matrix.
  const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  const double ux = std::cos(theta), uy = std::sin(theta);

  std::vector<double> along(n), across(n);
  for (std::size_t i = 0; i < n; ++i) {
    along[i] = points[i].x * ux + points[i].y * uy;
    across[i] = -points[i].x * uy + points[i].y * ux;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return across[a] < across[b]; });

  std::vector<std::vector<std::size_t>> rows(1);
  rows[0].push_back(order[0]);
  for (std::size_t i = 1; i < n; ++i) {
    if (across[order[i]] - across[order[i - 1]] > 0.5 * row_spacing_px) rows.emplace_back();
    rows.back().push_back(order[i]);
  }
  report.row_count = rows.size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto& row = rows[r];
    std::stable_sort(row.begin(), row.end(), [&](std::size_t a, std::size_t b) { return along[a] < along[b]; });
    for (std::size_t idx : row) report.row_of[idx] = r;
    for (std::size_t i = 1; i < row.size(); ++i) {
      const Point& a = points[row[i - 1]];
      const Point& b = points[row[i]];
      report.pairs.emplace_back(row[i - 1], row[i]);
      report.distances_cm.push_back(px_to_cm(std::hypot(b.x - a.x, b.y - a.y), gsd_mm));
    }
  }
  return report;
}

SpacingAccuracy spacing_accuracy(std::span<const double> estimated, std::span<const double> reference) {
  if (estimated.size() != reference.size()) {
    throw DimensionError("spacing accuracy: " + std::to_string(estimated.size()) + " estimates for " +
                         std::to_string(reference.size()) + " references");
  }
  SpacingAccuracy out;
  const std::size_t n = estimated.size();
  if (n == 0) return out;
  double se = 0.0;
  for (std::size_t i = 0; i < n; ++i) se += (estimated[i] - reference[i]) * (estimated[i] - reference[i]);
  out.rmse = std::sqrt(se / static_cast<double>(n));
  if (n < 2) return out;

  const double me = std::accumulate(estimated.begin(), estimated.end(), 0.0) / static_cast<double>(n);
  const double mr = std::accumulate(reference.begin(), reference.end(), 0.0) / static_cast<double>(n);
  double srr = 0.0, sre = 0.0, see = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    srr += (reference[i] - mr) * (reference[i] - mr);
    sre += (reference[i] - mr) * (estimated[i] - me);
    see += (estimated[i] - me) * (estimated[i] - me);
  }
  if (srr == 0.0) return out;
  const double slope = sre / srr;
  out.slope = slope;
  out.intercept = me - slope * mr;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double fit = *out.intercept + slope * reference[i];
    ss_res += (estimated[i] - fit) * (estimated[i] - fit);
  }
  out.r_squared = see == 0.0 ? 1.0 : 1.0 - ss_res / see;
  return out;
}

double px_to_cm(double px, double gsd_mm) {
  if (!(gsd_mm > 0.0)) throw ConfigError("gsd must be positive");
  return px * gsd_mm / 10.0;
}

}  // namespace akt
