#pragma once

// The AKT point localizer: stride-32 conv backbone, sine-cosine positional
// embedding, PAA encoder, query decoder and point regression head.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "akt/attention.hpp"
#include "akt/kan.hpp"
#include "akt/nn.hpp"
#include "akt/tensor.hpp"

namespace akt {

struct ModelConfig {
  std::size_t height = 256;
  std::size_t width = 256;
  std::size_t backbone_channels = 256;  // C
  std::size_t embed = 64;               // c
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t queries = 64;
  std::size_t kan_hidden = 32;
  std::size_t heads = 4;
  std::size_t pkan_groups = 4;
  bool keep_spline = true;
  GateOrder gate_order = GateOrder::kSaCa;
  FeedForwardKind feed_forward = FeedForwardKind::kPkan;
  AttentionKind encoder_attention = AttentionKind::kPaa;
  /// Queries start from the memory sampled at their reference points.
  bool query_sampling = true;
  /// Initial gain of the last map of every residual branch.
  double branch_scale = 0.1;
  std::uint64_t seed = 0;

  std::size_t grid_height() const { return height / 32; }
  std::size_t grid_width() const { return width / 32; }
  std::size_t tokens() const { return grid_height() * grid_width(); }
  void validate() const;
};

struct ConvStage {
  Tensor weight;  // [9 * c_in x c_out]
  Tensor bias;    // [c_out]
};

struct EncoderLayer {
  LayerNorm attn_norm;
  PaaParams paa;  // used when the encoder attention is PAA
  MhaParams mha;  // used when it is MHA
  LayerNorm kan_norm;
  KanPair kan;
};

struct DecoderLayer {
  LayerNorm self_norm;
  MhaParams self_attn;
  LayerNorm ffn1_norm;
  FeedForward ffn1;
  LayerNorm cross_norm;
  MhaParams cross_attn;
  LayerNorm ffn2_norm;
  FeedForward ffn2;
  LayerNorm kan_norm;
  KanPair kan;
};

struct AktModel {
  ModelConfig config;
  std::vector<ConvStage> backbone;
  Linear projection;  // C -> c
  LayerNorm projection_norm;
  std::vector<EncoderLayer> encoder;
  LayerNorm encoder_norm;
  std::vector<DecoderLayer> decoder;
  LayerNorm decoder_norm;
  Tensor queries;         // [M x c]
  Tensor reference;       // [M x 2] logits of (x, y) in [0, 1]
  Linear head1, head2, head3;  // c -> c -> c -> 2
  Linear conf_head;            // c -> 1

  static AktModel init(const ModelConfig& config);
  /// Parameters in a fixed order with stable names.
  ParamList parameters() const;
};

/// Stride-2 3x3 conv stages with SiLU; channels C/16, C/8, C/4, C/2, C.
Tensor backbone_forward(const Tensor& image, const AktModel& model);

/// Interleaved sin/cos of the row coordinate (first half) and the column
/// coordinate (second half) at frequencies 1 / 10000^(k / (c/4)).
Tensor sine_embedding(std::span<const double> rows, std::span<const double> cols, std::size_t width);
/// Embedding of the row-major token grid [(gh * gw) x width].
Tensor grid_embedding(std::size_t grid_height, std::size_t grid_width, std::size_t width);

struct TokenSequence {
  Tensor tokens;     // [N x c]
  Tensor embedding;  // [N x c]
};

/// 1x1 projection, normalisation, row-major flatten and positional embedding.
TokenSequence positional_embed(const Tensor& features, const AktModel& model);

Tensor encoder_layer(const Tensor& tokens, const EncoderLayer& layer, AttentionKind kind);
Tensor decoder_layer(const Tensor& queries, const Tensor& query_pos, const Tensor& memory, const Tensor& memory_pos,
                     const DecoderLayer& layer);

struct PointPredictions {
  Tensor coords;  // [M x 2], normalised (x, y)
  Tensor conf;    // [M]
};

PointPredictions akt_forward(const Tensor& image, const AktModel& model);

struct ParamFlops {
  std::size_t backbone_params = 0;
  std::size_t encoder_params = 0;
  std::size_t decoder_params = 0;
  std::size_t head_params = 0;  // projection, norms, queries, references, heads
  double backbone_flops = 0.0;
  double encoder_flops = 0.0;
  double decoder_flops = 0.0;
  double head_flops = 0.0;

  std::size_t params() const { return backbone_params + encoder_params + decoder_params + head_params; }
  double flops() const { return backbone_flops + encoder_flops + decoder_flops + head_flops; }
};

/// Closed-form parameter and multiply-add counts; matrix products and the
/// per-token attention terms only.
ParamFlops count_params_flops(const ModelConfig& config);

}  // namespace akt
