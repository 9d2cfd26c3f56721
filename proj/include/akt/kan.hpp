#pragma once

// Kolmogorov-Arnold layers: B-spline edge functions, the safe Pade
// activation unit (PAU), the grouped-rational PKAN block, and the plain MLP
// and vanilla-KAN feed-forward baselines used for ablations.

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "akt/nn.hpp"
#include "akt/tensor.hpp"

namespace akt {

/// Uniform knot vector over [lo, hi] with `degree` extra knots on each side,
/// G + 2k + 1 strictly increasing knots and G + k basis functions.
class BSplineGrid {
 public:
  static BSplineGrid uniform(double lo, double hi, std::size_t grid_count, std::size_t degree);

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  std::size_t grid_count() const { return grid_count_; }
  std::size_t degree() const { return degree_; }
  std::size_t basis_count() const { return grid_count_ + degree_; }
  std::span<const double> knots() const { return knots_; }

  /// Cox-de Boor evaluation of all basis functions at x. Inputs outside
  /// [lo, hi] are clamped to the boundary. `derivs` may be empty.
  void evaluate(double x, std::span<double> values, std::span<double> derivs) const;
  std::vector<double> basis(double x) const;

 private:
  double lo_ = -1.0;
  double hi_ = 1.0;
  std::size_t grid_count_ = 5;
  std::size_t degree_ = 3;
  std::vector<double> knots_;
};

/// Differentiable basis expansion: output shape is x.shape() + [G + k].
Tensor bspline_basis(const Tensor& x, const BSplineGrid& grid);

// ---------------------------------------------------------------------------
// Pade activation unit

/// w * (a0 + a1 x + ... + am x^m) / (1 + |b1 x + ... + bn x^n|)
struct PauParams {
  Tensor numerator;    // [m + 1]
  Tensor denominator;  // [n]
  Tensor scale;        // [1]
  int group_id = 0;

  std::size_t numerator_order() const { return numerator.numel() - 1; }
  std::size_t denominator_order() const { return denominator.numel(); }

  /// Orders m = 5, n = 4 initialised at the least-squares SiLU fit on [-3, 3].
  static PauParams silu_fit();
  static PauParams from(std::vector<double> numerator, std::vector<double> denominator, double scale = 1.0);
};

/// The frozen SiLU fit coefficients (m = 5, n = 4).
std::span<const double> silu_fit_numerator();
std::span<const double> silu_fit_denominator();

double pau_denominator(double x, std::span<const double> denominator);
double pau_value(double x, std::span<const double> numerator, std::span<const double> denominator, double scale);

Tensor pau_eval(const Tensor& x, const PauParams& p);

/// Grouped PAU over the last axis: channel c belongs to group c / (width/g).
/// `numerators` is [g x (m+1)], `denominator` [n] shared by all groups,
/// `scales` [g].
Tensor grouped_pau(const Tensor& x, const Tensor& numerators, const Tensor& denominator, const Tensor& scales);

// ---------------------------------------------------------------------------
// KAN linear layer

enum class KanBase { kSilu, kPau };

struct KanLinearLayer {
  BSplineGrid grid;
  Tensor base_weight;    // w_b [n_out x n_in]
  Tensor spline_weight;  // w_s [n_out x n_in]
  Tensor coeffs;         // c   [n_out x n_in x (G + k)]
  KanBase base = KanBase::kSilu;
  PauParams pau;  // used when base == kPau, shared by all edges of the layer

  static KanLinearLayer init(std::size_t n_in, std::size_t n_out, Rng& rng, KanBase base = KanBase::kSilu,
                             const BSplineGrid& grid = BSplineGrid::uniform(-1.0, 1.0, 5, 3));
  std::size_t in_dim() const { return base_weight.dim(1); }
  std::size_t out_dim() const { return base_weight.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Scalar edge function phi(x) = w_b base(x) + w_s sum_i c_i B_i(x).
double kan_phi(double x, double w_b, double w_s, std::span<const double> coeffs, const BSplineGrid& grid,
               KanBase base, const PauParams* pau = nullptr);

/// out_q = sum_p phi_{q,p}(x_p) for x of shape [batch x n_in].
Tensor kan_linear_forward(const Tensor& x, const KanLinearLayer& layer);

/// n_in * n_out * (G + k + 2): spline coefficients plus w_b and w_s per edge.
std::size_t kan_linear_param_count(std::size_t n_in, std::size_t n_out, const BSplineGrid& grid);

// ---------------------------------------------------------------------------
// PKAN block: linear -> grouped PAU (+ optional per-channel spline) -> linear

struct PkanBlock {
  Linear input;
  Linear output;
  Tensor numerators;   // [g x (m+1)]
  Tensor denominator;  // [n], shared across groups
  Tensor scales;       // [g]
  std::size_t groups = 1;
  bool keep_spline = true;
  BSplineGrid grid = BSplineGrid::uniform(-1.0, 1.0, 5, 3);
  Tensor spline_coeffs;  // [hidden x (G + k)] when keep_spline

  static PkanBlock init(std::size_t dim, std::size_t hidden, std::size_t groups, bool keep_spline, Rng& rng);
  std::size_t hidden_dim() const { return input.out_dim(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor pkan_forward(const Tensor& x, const PkanBlock& block);

// ---------------------------------------------------------------------------
// Baselines

struct Mlp {
  Linear input;
  Linear output;

  static Mlp init(std::size_t dim, std::size_t hidden, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Linear -> SiLU -> Linear.
Tensor mlp_forward(const Tensor& x, const Mlp& mlp);

struct KanPair {
  KanLinearLayer first;
  KanLinearLayer second;

  static KanPair init(std::size_t dim, std::size_t hidden, Rng& rng, KanBase base = KanBase::kSilu);
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor kan_pair_forward(const Tensor& x, const KanPair& pair);

/// Which block fills the PKAN slots of the model (ablation axis).
enum class FeedForwardKind { kPkan, kMlp, kKan };

FeedForwardKind parse_feed_forward_kind(const std::string& name);
std::string to_string(FeedForwardKind kind);

struct FeedForward {
  std::variant<PkanBlock, Mlp, KanPair> block;

  static FeedForward init(FeedForwardKind kind, std::size_t dim, std::size_t hidden, std::size_t groups,
                          bool keep_spline, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace akt
