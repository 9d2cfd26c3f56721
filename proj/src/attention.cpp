#include "akt/attention.hpp"

#include <cmath>

#include "akt/error.hpp"

namespace akt {

GateOrder parse_gate_order(const std::string& name) {
  if (name == "sa_ca") return GateOrder::kSaCa;
  if (name == "ca_sa") return GateOrder::kCaSa;
  throw ConfigError("unknown gate order '" + name + "' (expected sa_ca or ca_sa)");
}

std::string to_string(GateOrder order) { return order == GateOrder::kSaCa ? "sa_ca" : "ca_sa"; }

GateParams GateParams::init(std::size_t dim, std::size_t reduction, Rng& rng) {
  if (reduction == 0 || dim % reduction != 0) {
    throw ConfigError("gate reduction " + std::to_string(reduction) + " must divide width " + std::to_string(dim));
  }
  GateParams p;
  p.reduce = Linear::init(dim, dim / reduction, rng);
  p.expand = Linear::init(dim / reduction, dim, rng);
  p.scorer = Linear::init(dim, 1, rng);
  return p;
}

void GateParams::collect(const std::string& prefix, ParamList& out) const {
  reduce.collect(prefix + ".reduce", out);
  expand.collect(prefix + ".expand", out);
  scorer.collect(prefix + ".scorer", out);
}

Tensor channel_gate(const Tensor& x, const GateParams& p) {
  if (x.rank() != 2) throw DimensionError("channel_gate expects [N x d], got " + shape_str(x.shape()));
  Tensor stats = mean(x, 0, true);
  Tensor gate = sigmoid(p.expand(silu(p.reduce(stats))));
  return x * gate;
}

Tensor spatial_gate(const Tensor& x, const GateParams& p) {
  if (x.rank() != 2) throw DimensionError("spatial_gate expects [N x d], got " + shape_str(x.shape()));
  return x * sigmoid(p.scorer(x));
}

Tensor apply_gates(const Tensor& x, const GateParams& p, GateOrder order) {
  if (order == GateOrder::kSaCa) return spatial_gate(channel_gate(x, p), p);
  return channel_gate(spatial_gate(x, p), p);
}

PaaParams PaaParams::init(std::size_t dim, Rng& rng, GateOrder order, FeedForwardKind ffn_kind, std::size_t groups,
                          bool keep_spline) {
  PaaParams p;
  p.query = Linear::init(dim, dim, rng);
  p.key = Linear::init(dim, dim, rng);
  p.value = Linear::init(dim, dim, rng);
  p.gates = GateParams::init(dim, dim >= 4 ? 4 : 1, rng);
  p.combine = Linear::init(2 * dim, dim, rng, false);
  p.score = normal_param({dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  p.ffn = FeedForward::init(ffn_kind, dim, dim, groups, keep_spline, rng);
  p.order = order;
  return p;
}

void PaaParams::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  gates.collect(prefix + ".gates", out);
  combine.collect(prefix + ".combine", out);
  out.push_back({prefix + ".score", score});
  ffn.collect(prefix + ".ffn", out);
}

Tensor paa_branch(const Tensor& x, const PaaParams& p, PaaTrace* trace) {
  if (x.rank() != 2 || x.dim(1) != p.dim()) {
    throw DimensionError("paa_forward expects [N x " + std::to_string(p.dim()) + "], got " + shape_str(x.shape()));
  }
  if (x.dim(0) == 0) throw DimensionError("paa_forward needs at least one token");
  const std::size_t d = p.dim();
  Tensor q = p.query(x);
  Tensor k = p.key(x);
  Tensor v = p.value(x);
  Tensor gated = concat({apply_gates(q, p.gates, p.order), apply_gates(k, p.gates, p.order)}, 1);
  Tensor u = p.combine(gated);
  Tensor scores = matmul(u, reshape(p.score, {d, 1})) * (1.0 / std::sqrt(static_cast<double>(d)));
  Tensor alpha = softmax(scores, 0);
  Tensor context = sum(alpha * u, 0, true);
  Tensor y = context * v;
  if (trace) {
    *trace = PaaTrace{q, k, v, gated, u, reshape(alpha, {x.dim(0)}), reshape(context, {d}), y};
  }
  return p.ffn(y);
}

Tensor paa_forward(const Tensor& x, const PaaParams& p, PaaTrace* trace) { return x + paa_branch(x, p, trace); }

MhaParams MhaParams::init(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("head count " + std::to_string(heads) + " must divide width " + std::to_string(dim));
  }
  MhaParams p;
  p.query = Linear::init(dim, dim, rng);
  p.key = Linear::init(dim, dim, rng);
  p.value = Linear::init(dim, dim, rng);
  p.output = Linear::init(dim, dim, rng);
  p.heads = heads;
  return p;
}

void MhaParams::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

Tensor mha_attend(const Tensor& queries, const Tensor& keys, const Tensor& values, const MhaParams& p) {
  const std::size_t d = p.dim();
  for (const Tensor* t : {&queries, &keys, &values}) {
    if (t->rank() != 2 || t->dim(1) != d) {
      throw DimensionError("attention expects [N x " + std::to_string(d) + "], got " + shape_str(t->shape()));
    }
  }
  if (keys.dim(0) != values.dim(0)) throw DimensionError("keys and values must have the same token count");
  if (keys.dim(0) == 0) throw DimensionError("attention needs at least one key");
  const std::size_t dh = d / p.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = p.query(queries);
  Tensor k = p.key(keys);
  Tensor v = p.value(values);
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Tensor qh = p.heads == 1 ? q : slice(q, 1, h * dh, dh);
    Tensor kh = p.heads == 1 ? k : slice(k, 1, h * dh, dh);
    Tensor vh = p.heads == 1 ? v : slice(v, 1, h * dh, dh);
    Tensor logits = matmul(qh, transpose(kh)) * inv;
    heads.push_back(matmul(softmax(logits, 1), vh));
  }
  return p.output(p.heads == 1 ? heads.front() : concat(heads, 1));
}

Tensor mha_forward(const Tensor& x, const MhaParams& p) { return mha_attend(x, x, x, p); }

AttentionKind parse_attention_kind(const std::string& name) {
  if (name == "paa") return AttentionKind::kPaa;
  if (name == "mha") return AttentionKind::kMha;
  throw ConfigError("unknown attention variant '" + name + "' (expected paa or mha)");
}

std::string to_string(AttentionKind kind) { return kind == AttentionKind::kPaa ? "paa" : "mha"; }

double attention_flops(AttentionKind kind, double tokens, double dim) {
  if (tokens < 1.0 || dim < 1.0) throw ConfigError("attention_flops needs N >= 1 and d >= 1");
  if (kind == AttentionKind::kMha) return 2.0 * tokens * tokens * dim + 4.0 * tokens * dim * dim;
  return 7.0 * tokens * dim * dim + kPaaTokenCost * tokens * dim;
}

std::size_t attention_crossover(std::size_t dim) {
  std::size_t n = 1;
  const double d = static_cast<double>(dim);
  while (attention_flops(AttentionKind::kPaa, static_cast<double>(n), d) >=
         attention_flops(AttentionKind::kMha, static_cast<double>(n), d)) {
    ++n;
  }
  return n;
}

}  // namespace akt
