#pragma once

// Small building blocks shared by every layer: named parameter lists,
// affine maps and layer normalisation.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "akt/tensor.hpp"

namespace akt {

using Rng = std::mt19937_64;

/// Independent stream for item `index` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

Tensor uniform_param(Shape shape, double bound, Rng& rng);
Tensor normal_param(Shape shape, double stddev, Rng& rng);

/// y = x W + b with W stored [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when the map has no bias

  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm init(std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(const std::string& prefix, ParamList& out) const;
};

std::size_t count_params(const ParamList& params);

}  // namespace akt
