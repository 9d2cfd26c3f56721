#pragma once

// PKAN additive attention (gated Q/K, softmax-pooled global context,
// position-wise product with V, PKAN residual) and the multi-head
// scaled dot-product baseline.

#include <cstddef>
#include <string>

#include "akt/kan.hpp"
#include "akt/nn.hpp"
#include "akt/tensor.hpp"

namespace akt {

/// kSaCa applies the channel gate first, then the spatial gate: SA(CA(x)).
enum class GateOrder { kSaCa, kCaSa };

GateOrder parse_gate_order(const std::string& name);
std::string to_string(GateOrder order);

struct GateParams {
  Linear reduce;  // d -> d/r
  Linear expand;  // d/r -> d
  Linear scorer;  // d -> 1

  static GateParams init(std::size_t dim, std::size_t reduction, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// x scaled per channel by sigmoid(expand(silu(reduce(mean over tokens)))).
Tensor channel_gate(const Tensor& x, const GateParams& p);
/// x scaled per token by sigmoid(scorer(x_i)).
Tensor spatial_gate(const Tensor& x, const GateParams& p);
Tensor apply_gates(const Tensor& x, const GateParams& p, GateOrder order);

struct PaaParams {
  Linear query;
  Linear key;
  Linear value;
  GateParams gates;  // shared by the Q and K paths
  Linear combine;    // W_c: 2d -> d, no bias
  Tensor score;      // w_a [d]
  FeedForward ffn;
  GateOrder order = GateOrder::kSaCa;

  static PaaParams init(std::size_t dim, Rng& rng, GateOrder order = GateOrder::kSaCa,
                        FeedForwardKind ffn_kind = FeedForwardKind::kPkan, std::size_t groups = 4,
                        bool keep_spline = true);
  std::size_t dim() const { return query.in_dim(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Intermediate values of one PAA evaluation.
struct PaaTrace {
  Tensor q, k, v;
  Tensor gated;    // [N x 2d]
  Tensor u;        // [N x d]
  Tensor alpha;    // [N]
  Tensor context;  // [d]
  Tensor y;        // [N x d]
};

/// FFN(g * V_i) with g = sum_i softmax(U w_a / sqrt(d))_i U_i. Linear in N.
Tensor paa_branch(const Tensor& x, const PaaParams& p, PaaTrace* trace = nullptr);
/// x + paa_branch(x).
Tensor paa_forward(const Tensor& x, const PaaParams& p, PaaTrace* trace = nullptr);

struct MhaParams {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  static MhaParams init(std::size_t dim, std::size_t heads, Rng& rng);
  std::size_t dim() const { return query.in_dim(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Multi-head scaled dot-product attention of queries over keys/values.
Tensor mha_attend(const Tensor& queries, const Tensor& keys, const Tensor& values, const MhaParams& p);

/// Self-attention over x.
Tensor mha_forward(const Tensor& x, const MhaParams& p);

enum class AttentionKind { kPaa, kMha };

AttentionKind parse_attention_kind(const std::string& name);
std::string to_string(AttentionKind kind);

/// Per-token multiply-adds of PAA beyond its seven d x d maps: gates on two
/// paths (channel scale 1, spatial score 1 + scale 1 each), token score,
/// context sum, value product, residual, and the PKAN rational
/// (m + n + 2) plus spline (k + 1) per hidden channel.
inline constexpr double kPaaTokenCost = 2.0 * 3.0 + 1.0 + 1.0 + 1.0 + 1.0 + (5.0 + 4.0 + 2.0) + 4.0;

/// Analytic multiply-add count. MHA: 2 N^2 d + 4 N d^2 (projections
/// included). PAA: 7 N d^2 + kPaaTokenCost N d.
double attention_flops(AttentionKind kind, double tokens, double dim);

/// Smallest N with PAA strictly cheaper than MHA at width d.
std::size_t attention_crossover(std::size_t dim);

}  // namespace akt
