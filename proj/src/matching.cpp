#include "akt/matching.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "akt/error.hpp"

namespace akt {

CostMatrix::CostMatrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != rows * cols) {
    throw DimensionError("cost matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                         std::to_string(values.size()) + " entries");
  }
}

double match_cost(const Point& prediction, double confidence, const Point& target) {
  return std::abs(target.x - prediction.x) + std::abs(target.y - prediction.y) - confidence;
}

CostMatrix build_cost_matrix(std::span<const Point> predictions, std::span<const double> confidences,
                             std::span<const Point> targets) {
  if (predictions.size() != confidences.size()) {
    throw DimensionError("cost matrix: " + std::to_string(confidences.size()) + " confidences for " +
                         std::to_string(predictions.size()) + " predictions");
  }
  std::vector<double> values;
  values.reserve(targets.size() * predictions.size());
  for (const Point& g : targets) {
    for (std::size_t j = 0; j < predictions.size(); ++j) values.push_back(match_cost(predictions[j], confidences[j], g));
  }
  return CostMatrix(targets.size(), predictions.size(), std::move(values));
}

MatchResult hungarian(const CostMatrix& cost) {
  const std::size_t n = cost.rows;
  const std::size_t m = cost.cols;
  if (n > m) {
    throw InfeasibleError("cannot assign " + std::to_string(n) + " ground-truth points to " + std::to_string(m) +
                          " predictions");
  }
  for (double c : cost.values) {
    if (!std::isfinite(c)) throw NumericError("hungarian: non-finite cost entry");
  }

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source of each augmenting path.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  MatchResult result;
  result.assignment.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j] != 0) {
      result.assignment[owner[j] - 1] = j - 1;
    } else {
      result.unmatched.push_back(j - 1);
    }
  }
  for (std::size_t i = 0; i < n; ++i) result.total_cost += cost.at(i, result.assignment[i]);
  return result;
}

LossTerms training_loss(const Tensor& coords, const Tensor& conf, std::span<const Point> targets) {
  if (coords.rank() != 2 || coords.dim(1) != 2) {
    throw DimensionError("training_loss: coords must be [M x 2], got " + shape_str(coords.shape()));
  }
  const std::size_t m = coords.dim(0);
  if (conf.numel() != m) throw DimensionError("training_loss: one confidence per prediction required");
  if (targets.size() > m) {
    throw InfeasibleError("training_loss: " + std::to_string(targets.size()) + " targets exceed " +
                          std::to_string(m) + " queries");
  }

  std::vector<Point> preds(m);
  const auto cd = coords.data();
  for (std::size_t j = 0; j < m; ++j) preds[j] = {cd[2 * j], cd[2 * j + 1]};
  const auto cf = conf.data();
  LossTerms out;
  out.match = hungarian(build_cost_matrix(preds, std::vector<double>(cf.begin(), cf.end()), targets));

  std::vector<double> labels(m, 0.0);
  for (std::size_t col : out.match.assignment) labels[col] = 1.0;
  Tensor loss = binary_cross_entropy(reshape(conf, {m}), labels) * kConfWeight;
  if (!targets.empty()) {
    std::vector<double> tv;
    tv.reserve(2 * targets.size());
    for (const Point& g : targets) {
      tv.push_back(g.x);
      tv.push_back(g.y);
    }
    Tensor matched = take_rows(coords, out.match.assignment);
    Tensor l1 = sum(abs(matched - Tensor::from({targets.size(), 2}, std::move(tv))));
    loss = loss + l1 * (kCoordWeight / static_cast<double>(targets.size()));
  }
  out.total = loss;
  return out;
}

}  // namespace akt
