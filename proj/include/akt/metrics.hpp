#pragma once

// Evaluation protocol: threshold-swept localization precision/recall/F1,
// counting errors, inter-plant spacing and unit conversion.

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "akt/points.hpp"

namespace akt {

inline constexpr double kDefaultGsdMm = 2.38;

struct MetricConfig {
  std::vector<double> thresholds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};  // px
  double gsd_mm = kDefaultGsdMm;
  double conf_cutoff = 0.5;

  /// Throws ConfigError unless thresholds are positive ascending and gsd > 0.
  void validate() const;
};

struct ThresholdScore {
  double alpha = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;  // percent
  double recall = 0.0;     // percent
  double f1 = 0.0;         // percent
};

struct LocalizationReport {
  std::vector<ThresholdScore> per_alpha;
  double avg_precision = 0.0;
  double avg_recall = 0.0;
  double avg_f1 = 0.0;

  const ThresholdScore& at_alpha(double alpha) const;
};

/// Percent scores from counts, with 0/0 taken as 0.
ThresholdScore score_counts(double alpha, std::size_t tp, std::size_t fp, std::size_t fn);

/// One-to-one assignment minimising total Euclidean distance; for each
/// threshold the assigned pairs within alpha are true positives.
LocalizationReport localization_metrics(std::span<const Point> pred, std::span<const Point> gt,
                                        const MetricConfig& cfg);

/// Sums TP/FP/FN over images before forming the ratios.
class LocalizationAccumulator {
 public:
  explicit LocalizationAccumulator(MetricConfig cfg);
  void add(std::span<const Point> pred, std::span<const Point> gt);
  LocalizationReport report() const;

 private:
  MetricConfig cfg_;
  std::vector<std::size_t> tp_, fp_, fn_;
};

struct CountingReport {
  double mae = 0.0;
  double mse = 0.0;
};

CountingReport counting_metrics(std::span<const double> predicted, std::span<const double> truth);

/// Number of confidences strictly above the cutoff.
std::size_t count_confident(std::span<const double> confidences, double cutoff);

struct SpacingReport {
  std::vector<double> distances_cm;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // point indices, in row order
  std::vector<std::size_t> row_of;                         // row label per input point
  std::size_t row_count = 0;
};

/// Rows found by projecting on the dominant covariance direction and
/// splitting the perpendicular coordinate at gaps above half the nominal
/// row spacing; consecutive plants along each row give one distance each.
SpacingReport spacing_estimate(std::span<const Point> points, double gsd_mm, double row_spacing_px);

struct SpacingAccuracy {
  double rmse = 0.0;
  std::optional<double> r_squared;  // absent when the reference has no variance
  std::optional<double> slope;
  std::optional<double> intercept;
};

/// RMSE of estimated against reference and the R^2 of the least-squares
/// line of estimated on reference.
SpacingAccuracy spacing_accuracy(std::span<const double> estimated, std::span<const double> reference);

double px_to_cm(double px, double gsd_mm);

}  // namespace akt
