#pragma once

// Adam with coupled L2 weight decay and optional global gradient-norm clipping.

#include <cstddef>
#include <vector>

#include "akt/nn.hpp"

namespace akt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  double clip_norm = 1.0;  // 0 disables clipping

  void validate() const;
};

class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);

  /// One update from the accumulated gradients; parameters without a
  /// gradient are treated as having zero gradient. Returns the pre-clip
  /// gradient norm.
  double step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace akt
