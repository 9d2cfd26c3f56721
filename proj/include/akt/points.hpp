#pragma once

#include <vector>

namespace akt {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Points in one frame; `confidences` is empty for ground truth.
struct PointSet {
  std::vector<Point> points;
  std::vector<double> confidences;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

}  // namespace akt
