#include "akt/model.hpp"

#include <algorithm>
#include <cmath>

#include "akt/error.hpp"

namespace akt {

namespace {

constexpr std::size_t kStages = 5;
constexpr double kPositionTemperature = 10000.0;

void scale_in_place(Tensor& t, double gain) {
  for (double& v : t.mutable_data()) v *= gain;
}

/// Shrinks the last map of a residual branch so the stack starts near identity.
void scale_branch(FeedForward& ffn, double gain) {
  std::visit(
      [gain](auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, KanPair>) {
          scale_in_place(b.second.base_weight, gain);
          scale_in_place(b.second.coeffs, gain);
        } else {
          scale_in_place(b.output.weight, gain);
        }
      },
      ffn.block);
}

void scale_branch(KanPair& kan, double gain) {
  scale_in_place(kan.second.base_weight, gain);
  scale_in_place(kan.second.coeffs, gain);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

std::size_t stage_channels(const ModelConfig& c, std::size_t stage) {
  return c.backbone_channels >> (kStages - 1 - stage);
}

}  // namespace

void ModelConfig::validate() const {
  if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError("image extents " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be positive multiples of 32");
  }
  if (backbone_channels < 16 || backbone_channels % 16 != 0) {
    throw ConfigError("backbone channels must be a positive multiple of 16");
  }
  if (embed == 0 || embed % 4 != 0) throw ConfigError("embedding width must be a positive multiple of 4");
  if (heads == 0 || embed % heads != 0) throw ConfigError("head count must divide the embedding width");
  if (pkan_groups == 0 || embed % pkan_groups != 0) throw ConfigError("PKAN groups must divide the embedding width");
  if (queries == 0) throw ConfigError("at least one query is required");
  if (kan_hidden == 0) throw ConfigError("KAN hidden width must be positive");
  if (!(branch_scale > 0.0)) throw ConfigError("branch scale must be positive");
}

AktModel AktModel::init(const ModelConfig& config) {
  config.validate();
  AktModel m;
  m.config = config;
  Rng rng(derive_seed(config.seed, 0));
  const std::size_t c = config.embed;
  const double gain = config.branch_scale;

  std::size_t c_in = 3;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t c_out = stage_channels(config, s);
    const double std = std::sqrt(2.0 / (9.0 * static_cast<double>(c_in)));
    m.backbone.push_back({normal_param({9 * c_in, c_out}, std, rng), Tensor::zeros({c_out}, true)});
    c_in = c_out;
  }
  m.projection = Linear::init(config.backbone_channels, c, rng);
  m.projection_norm = LayerNorm::init(c);

  for (std::size_t l = 0; l < config.encoder_layers; ++l) {
    EncoderLayer layer;
    layer.attn_norm = LayerNorm::init(c);
    if (config.encoder_attention == AttentionKind::kPaa) {
      layer.paa = PaaParams::init(c, rng, config.gate_order, config.feed_forward, config.pkan_groups,
                                  config.keep_spline);
      scale_branch(layer.paa.ffn, gain);
    } else {
      layer.mha = MhaParams::init(c, config.heads, rng);
      scale_in_place(layer.mha.output.weight, gain);
    }
    layer.kan_norm = LayerNorm::init(c);
    layer.kan = KanPair::init(c, config.kan_hidden, rng);
    scale_branch(layer.kan, gain);
    m.encoder.push_back(std::move(layer));
  }
  m.encoder_norm = LayerNorm::init(c);

  for (std::size_t l = 0; l < config.decoder_layers; ++l) {
    DecoderLayer layer;
    layer.self_norm = LayerNorm::init(c);
    layer.self_attn = MhaParams::init(c, config.heads, rng);
    scale_in_place(layer.self_attn.output.weight, gain);
    layer.ffn1_norm = LayerNorm::init(c);
    layer.ffn1 = FeedForward::init(config.feed_forward, c, c, config.pkan_groups, config.keep_spline, rng);
    scale_branch(layer.ffn1, gain);
    layer.cross_norm = LayerNorm::init(c);
    layer.cross_attn = MhaParams::init(c, config.heads, rng);
    scale_in_place(layer.cross_attn.output.weight, gain);
    layer.ffn2_norm = LayerNorm::init(c);
    layer.ffn2 = FeedForward::init(config.feed_forward, c, c, config.pkan_groups, config.keep_spline, rng);
    scale_branch(layer.ffn2, gain);
    layer.kan_norm = LayerNorm::init(c);
    layer.kan = KanPair::init(c, config.kan_hidden, rng);
    scale_branch(layer.kan, gain);
    m.decoder.push_back(std::move(layer));
  }
  m.decoder_norm = LayerNorm::init(c);

  const std::size_t mq = config.queries;
  m.queries = normal_param({mq, c}, 0.02, rng);
  // Reference points start on a regular grid covering the image.
  const auto side_x = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(mq))));
  const std::size_t side_y = (mq + side_x - 1) / side_x;
  std::vector<double> ref(2 * mq);
  for (std::size_t i = 0; i < mq; ++i) {
    ref[2 * i] = logit((static_cast<double>(i % side_x) + 0.5) / static_cast<double>(side_x));
    ref[2 * i + 1] = logit((static_cast<double>(i / side_x) + 0.5) / static_cast<double>(side_y));
  }
  m.reference = Tensor::from({mq, 2}, std::move(ref), true);
  m.head1 = Linear::init(c, c, rng);
  m.head2 = Linear::init(c, c, rng);
  m.head3 = Linear::init(c, 2, rng);
  m.conf_head = Linear::init(c, 1, rng);
  return m;
}

ParamList AktModel::parameters() const {
  ParamList out;
  for (std::size_t s = 0; s < backbone.size(); ++s) {
    const std::string p = "backbone." + std::to_string(s);
    out.push_back({p + ".weight", backbone[s].weight});
    out.push_back({p + ".bias", backbone[s].bias});
  }
  projection.collect("projection", out);
  projection_norm.collect("projection_norm", out);
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l);
    const EncoderLayer& e = encoder[l];
    e.attn_norm.collect(p + ".attn_norm", out);
    if (config.encoder_attention == AttentionKind::kPaa) {
      e.paa.collect(p + ".paa", out);
    } else {
      e.mha.collect(p + ".mha", out);
    }
    e.kan_norm.collect(p + ".kan_norm", out);
    e.kan.collect(p + ".kan", out);
  }
  encoder_norm.collect("encoder_norm", out);
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    const DecoderLayer& d = decoder[l];
    d.self_norm.collect(p + ".self_norm", out);
    d.self_attn.collect(p + ".self_attn", out);
    d.ffn1_norm.collect(p + ".ffn1_norm", out);
    d.ffn1.collect(p + ".ffn1", out);
    d.cross_norm.collect(p + ".cross_norm", out);
    d.cross_attn.collect(p + ".cross_attn", out);
    d.ffn2_norm.collect(p + ".ffn2_norm", out);
    d.ffn2.collect(p + ".ffn2", out);
    d.kan_norm.collect(p + ".kan_norm", out);
    d.kan.collect(p + ".kan", out);
  }
  decoder_norm.collect("decoder_norm", out);
  out.push_back({"queries", queries});
  out.push_back({"reference", reference});
  head1.collect("head1", out);
  head2.collect("head2", out);
  head3.collect("head3", out);
  conf_head.collect("conf_head", out);
  return out;
}

Tensor backbone_forward(const Tensor& image, const AktModel& model) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("backbone expects an [H x W x 3] image, got " + shape_str(image.shape()));
  }
  if (image.dim(0) == 0 || image.dim(1) == 0 || image.dim(0) % 32 != 0 || image.dim(1) % 32 != 0) {
    throw ConfigError("image extents " + shape_str(image.shape()) + " are not multiples of 32");
  }
  Tensor x = image;
  for (const ConvStage& s : model.backbone) x = silu(conv2d(x, s.weight, s.bias, 3, 2, 1));
  return x;
}

Tensor sine_embedding(std::span<const double> rows, std::span<const double> cols, std::size_t width) {
  if (width == 0 || width % 4 != 0) throw ConfigError("sine embedding width must be a positive multiple of 4");
  if (rows.size() != cols.size()) throw DimensionError("sine embedding needs one column per row coordinate");
  const std::size_t q = width / 4;
  std::vector<double> freq(q);
  for (std::size_t k = 0; k < q; ++k) {
    freq[k] = 1.0 / std::pow(kPositionTemperature, static_cast<double>(k) / static_cast<double>(q));
  }
  std::vector<double> out(rows.size() * width);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    double* row = &out[n * width];
    for (std::size_t k = 0; k < q; ++k) {
      row[2 * k] = std::sin(rows[n] * freq[k]);
      row[2 * k + 1] = std::cos(rows[n] * freq[k]);
      row[2 * q + 2 * k] = std::sin(cols[n] * freq[k]);
      row[2 * q + 2 * k + 1] = std::cos(cols[n] * freq[k]);
    }
  }
  return Tensor::from({rows.size(), width}, std::move(out));
}

Tensor grid_embedding(std::size_t grid_height, std::size_t grid_width, std::size_t width) {
  std::vector<double> rows, cols;
  for (std::size_t i = 0; i < grid_height; ++i) {
    for (std::size_t j = 0; j < grid_width; ++j) {
      rows.push_back(static_cast<double>(i));
      cols.push_back(static_cast<double>(j));
    }
  }
  return sine_embedding(rows, cols, width);
}

TokenSequence positional_embed(const Tensor& features, const AktModel& model) {
  if (features.rank() != 3 || features.dim(2) != model.config.backbone_channels) {
    throw DimensionError("positional_embed expects [h x w x C], got " + shape_str(features.shape()));
  }
  const std::size_t gh = features.dim(0), gw = features.dim(1);
  Tensor flat = reshape(features, {gh * gw, features.dim(2)});
  TokenSequence seq;
  seq.embedding = grid_embedding(gh, gw, model.config.embed);
  seq.tokens = model.projection_norm(model.projection(flat)) + seq.embedding;
  return seq;
}

Tensor encoder_layer(const Tensor& tokens, const EncoderLayer& layer, AttentionKind kind) {
  Tensor h = layer.attn_norm(tokens);
  Tensor x = tokens + (kind == AttentionKind::kPaa ? paa_branch(h, layer.paa) : mha_forward(h, layer.mha));
  return x + kan_pair_forward(layer.kan_norm(x), layer.kan);
}

Tensor decoder_layer(const Tensor& queries, const Tensor& query_pos, const Tensor& memory, const Tensor& memory_pos,
                     const DecoderLayer& layer) {
  Tensor h = layer.self_norm(queries);
  Tensor qk = h + query_pos;
  Tensor x = queries + mha_attend(qk, qk, h, layer.self_attn);
  x = x + layer.ffn1(layer.ffn1_norm(x));
  h = layer.cross_norm(x);
  x = x + mha_attend(h + query_pos, memory + memory_pos, memory, layer.cross_attn);
  x = x + layer.ffn2(layer.ffn2_norm(x));
  return x + kan_pair_forward(layer.kan_norm(x), layer.kan);
}

namespace {

/// Bilinear weights [M x (gh * gw)] of each reference point on the token grid.
Tensor sampling_matrix(std::span<const double> ref_xy, std::size_t gh, std::size_t gw) {
  const std::size_t m = ref_xy.size() / 2;
  std::vector<double> s(m * gh * gw, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double fx = std::clamp(ref_xy[2 * i] * static_cast<double>(gw) - 0.5, 0.0, static_cast<double>(gw - 1));
    const double fy =
        std::clamp(ref_xy[2 * i + 1] * static_cast<double>(gh) - 0.5, 0.0, static_cast<double>(gh - 1));
    const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
    const std::size_t x1 = std::min(x0 + 1, gw - 1), y1 = std::min(y0 + 1, gh - 1);
    const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
    double* row = &s[i * gh * gw];
    row[y0 * gw + x0] += (1 - ay) * (1 - ax);
    row[y0 * gw + x1] += (1 - ay) * ax;
    row[y1 * gw + x0] += ay * (1 - ax);
    row[y1 * gw + x1] += ay * ax;
  }
  return Tensor::from({m, gh * gw}, std::move(s));
}

}  // namespace

PointPredictions akt_forward(const Tensor& image, const AktModel& model) {
  const ModelConfig& cfg = model.config;
  Tensor features = backbone_forward(image, model);
  const std::size_t gh = features.dim(0), gw = features.dim(1);
  TokenSequence seq = positional_embed(features, model);
  Tensor x = seq.tokens;
  for (const EncoderLayer& layer : model.encoder) x = encoder_layer(x, layer, cfg.encoder_attention);
  Tensor memory = model.encoder_norm(x);

  // Reference positions are treated as constants inside the decoder.
  const std::size_t mq = cfg.queries;
  std::vector<double> ref(2 * mq), rows(mq), cols(mq);
  const auto logits = model.reference.data();
  for (std::size_t i = 0; i < 2 * mq; ++i) ref[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  for (std::size_t i = 0; i < mq; ++i) {
    cols[i] = ref[2 * i] * static_cast<double>(gw) - 0.5;
    rows[i] = ref[2 * i + 1] * static_cast<double>(gh) - 0.5;
  }
  Tensor query_pos = sine_embedding(rows, cols, cfg.embed);
  Tensor q = model.queries;
  if (cfg.query_sampling) q = q + matmul(sampling_matrix(ref, gh, gw), memory);
  for (const DecoderLayer& layer : model.decoder) q = decoder_layer(q, query_pos, memory, seq.embedding, layer);

  Tensor h = model.decoder_norm(q);
  Tensor delta = model.head3(silu(model.head2(silu(model.head1(h)))));
  PointPredictions out;
  out.coords = sigmoid(model.reference + delta);
  out.conf = reshape(sigmoid(model.conf_head(h)), {mq});
  return out;
}

namespace {

std::size_t linear_params(std::size_t in, std::size_t out, bool bias = true) { return in * out + (bias ? out : 0); }

constexpr std::size_t kSplineBasis = 5 + 3;  // G + k of the default grid
constexpr std::size_t kPauTerms = 6 + 4;     // numerator plus denominator coefficients

std::size_t kan_pair_params(std::size_t dim, std::size_t hidden) {
  const BSplineGrid grid = BSplineGrid::uniform(-1.0, 1.0, 5, 3);
  return kan_linear_param_count(dim, hidden, grid) + kan_linear_param_count(hidden, dim, grid);
}

std::size_t ffn_params(const ModelConfig& c, std::size_t dim) {
  switch (c.feed_forward) {
    case FeedForwardKind::kPkan:
      return 2 * linear_params(dim, dim) + c.pkan_groups * 6 + 4 + c.pkan_groups +
             (c.keep_spline ? dim * kSplineBasis : 0);
    case FeedForwardKind::kMlp: return 2 * linear_params(dim, dim);
    case FeedForwardKind::kKan: return kan_pair_params(dim, dim);
  }
  return 0;
}

double kan_pair_flops(double tokens, double dim, double hidden) {
  // Basis products plus the base term per edge.
  return tokens * 2.0 * dim * hidden * static_cast<double>(kSplineBasis + 1);
}

double ffn_flops(const ModelConfig& c, double tokens, double dim) {
  switch (c.feed_forward) {
    case FeedForwardKind::kPkan:
      return 2.0 * tokens * dim * dim + tokens * dim * static_cast<double>(kPauTerms + (c.keep_spline ? 4 : 0));
    case FeedForwardKind::kMlp: return 2.0 * tokens * dim * dim;
    case FeedForwardKind::kKan: return kan_pair_flops(tokens, dim, dim);
  }
  return 0.0;
}

}  // namespace

ParamFlops count_params_flops(const ModelConfig& config) {
  config.validate();
  ParamFlops r;
  const std::size_t c = config.embed;
  const auto cd = static_cast<double>(c);
  const auto n = static_cast<double>(config.tokens());
  const auto mq = static_cast<double>(config.queries);

  std::size_t c_in = 3, h = config.height, w = config.width;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t c_out = stage_channels(config, s);
    r.backbone_params += 9 * c_in * c_out + c_out;
    h /= 2;
    w /= 2;
    r.backbone_flops += static_cast<double>(h * w) * 9.0 * static_cast<double>(c_in * c_out);
    c_in = c_out;
  }

  const std::size_t mha_params = 4 * linear_params(c, c);
  std::size_t attn_params = mha_params;
  if (config.encoder_attention == AttentionKind::kPaa) {
    attn_params = 3 * linear_params(c, c) + linear_params(c, c / 4) + linear_params(c / 4, c) + linear_params(c, 1) +
                  linear_params(2 * c, c, false) + c + ffn_params(config, c);
  }
  const std::size_t enc_layer = 2 * 2 * c + attn_params + kan_pair_params(c, config.kan_hidden);
  r.encoder_params = config.encoder_layers * enc_layer;
  const double enc_layer_flops = attention_flops(config.encoder_attention, n, cd) +
                                 kan_pair_flops(n, cd, static_cast<double>(config.kan_hidden));
  r.encoder_flops = static_cast<double>(config.encoder_layers) * enc_layer_flops;

  const std::size_t dec_layer = 5 * 2 * c + 2 * mha_params + 2 * ffn_params(config, c) +
                                kan_pair_params(c, config.kan_hidden);
  r.decoder_params = config.decoder_layers * dec_layer;
  const double cross = 2.0 * mq * cd * cd + 2.0 * n * cd * cd + 2.0 * mq * n * cd;
  const double dec_layer_flops = attention_flops(AttentionKind::kMha, mq, cd) + cross + 2.0 * ffn_flops(config, mq, cd) +
                                 kan_pair_flops(mq, cd, static_cast<double>(config.kan_hidden));
  r.decoder_flops = static_cast<double>(config.decoder_layers) * dec_layer_flops;

  r.head_params = linear_params(config.backbone_channels, c) + 3 * 2 * c + config.queries * c + config.queries * 2 +
                  2 * linear_params(c, c) + linear_params(c, 2) + linear_params(c, 1);
  r.head_flops = n * static_cast<double>(config.backbone_channels) * cd + mq * (2.0 * cd * cd + 3.0 * cd);
  if (config.query_sampling) r.head_flops += mq * n * cd;
  return r;
}

}  // namespace akt
