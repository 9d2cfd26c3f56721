#pragma once

// Minimum-cost one-to-one assignment of ground-truth points to predictions
// and the set-prediction training loss built on it.

#include <cstddef>
#include <span>
#include <vector>

#include "akt/points.hpp"
#include "akt/tensor.hpp"

namespace akt {

/// Rows are ground-truth points, columns are predictions.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, std::vector<double> v);
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct MatchResult {
  std::vector<std::size_t> assignment;  // ground-truth row -> prediction column
  double total_cost = 0.0;              // summed in row order
  std::vector<std::size_t> unmatched;   // prediction columns, ascending
};

/// |G - P|_1 - confidence.
double match_cost(const Point& prediction, double confidence, const Point& target);

/// Costs of every (ground truth, prediction) pair.
CostMatrix build_cost_matrix(std::span<const Point> predictions, std::span<const double> confidences,
                             std::span<const Point> targets);

/// Exact assignment by shortest augmenting paths with row/column potentials.
/// Among equal-cost choices the lowest column index wins. Throws
/// InfeasibleError when rows > cols.
MatchResult hungarian(const CostMatrix& cost);

inline constexpr double kCoordWeight = 5.0;
inline constexpr double kConfWeight = 1.0;

struct LossTerms {
  Tensor total;
  MatchResult match;
};

/// kCoordWeight * mean L1 over matched pairs + kConfWeight * BCE(conf,
/// matched), with the assignment held constant. `coords` is [M x 2] and
/// `conf` is [M], targets share the normalized frame of `coords`.
LossTerms training_loss(const Tensor& coords, const Tensor& conf, std::span<const Point> targets);

}  // namespace akt
