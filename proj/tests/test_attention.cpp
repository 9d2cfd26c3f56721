#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "akt/attention.hpp"
#include "akt/error.hpp"
#include "akt/grad_check.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace akt;
using akt::testing::fill_uniform;
using akt::testing::max_abs_diff;
using akt::testing::random_tensor;

namespace {

using Mat = std::vector<std::vector<double>>;

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigm(x); }

Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at({i, j});
  }
  return m;
}

Mat affine(const Mat& x, const Linear& l) {
  Mat y(x.size(), std::vector<double>(l.out_dim()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t o = 0; o < l.out_dim(); ++o) {
      double acc = l.bias.defined() ? l.bias.data()[o] : 0.0;
      for (std::size_t k = 0; k < l.in_dim(); ++k) acc += x[i][k] * l.weight.at({k, o});
      y[i][o] = acc;
    }
  }
  return y;
}

Mat ref_channel_gate(const Mat& x, const GateParams& p) {
  const std::size_t n = x.size(), d = x[0].size();
  Mat stats(1, std::vector<double>(d, 0.0));
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) stats[0][j] += x[i][j] / static_cast<double>(n);
  }
  Mat h = affine(stats, p.reduce);
  for (double& v : h[0]) v = silu(v);
  Mat g = affine(h, p.expand);
  Mat out = x;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i][j] *= sigm(g[0][j]);
  }
  return out;
}

Mat ref_spatial_gate(const Mat& x, const GateParams& p) {
  Mat s = affine(x, p.scorer);
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (double& v : out[i]) v *= sigm(s[i][0]);
  }
  return out;
}

Mat ref_pkan(const Mat& y, const PkanBlock& b) {
  Mat z = affine(y, b.input);
  const std::size_t hidden = b.hidden_dim(), per = hidden / b.groups;
  const auto den = b.denominator.to_vector();
  for (auto& row : z) {
    for (std::size_t c = 0; c < hidden; ++c) {
      const std::size_t g = c / per;
      const double x = row[c];
      double p = 0.0, xp = 1.0;
      for (std::size_t i = 0; i < b.numerators.dim(1); ++i, xp *= x) p += b.numerators.at({g, i}) * xp;
      double q = 0.0;
      xp = x;
      for (double a : den) {
        q += a * xp;
        xp *= x;
      }
      double v = b.scales.data()[g] * p / (1.0 + std::abs(q));
      if (b.keep_spline) {
        const auto basis = b.grid.basis(x);
        for (std::size_t i = 0; i < basis.size(); ++i) v += b.spline_coeffs.at({c, i}) * basis[i];
      }
      row[c] = v;
    }
  }
  return affine(z, b.output);
}

Mat ref_paa(const Mat& x, const PaaParams& p) {
  const std::size_t n = x.size(), d = x[0].size();
  Mat q = affine(x, p.query), k = affine(x, p.key), v = affine(x, p.value);
  auto gates = [&](const Mat& m) {
    return p.order == GateOrder::kSaCa ? ref_spatial_gate(ref_channel_gate(m, p.gates), p.gates)
                                       : ref_channel_gate(ref_spatial_gate(m, p.gates), p.gates);
  };
  Mat gq = gates(q), gk = gates(k);
  Mat cat(n);
  for (std::size_t i = 0; i < n; ++i) {
    cat[i] = gq[i];
    cat[i].insert(cat[i].end(), gk[i].begin(), gk[i].end());
  }
  Mat u = affine(cat, p.combine);
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) s[i] += u[i][j] * p.score.data()[j];
    s[i] /= std::sqrt(static_cast<double>(d));
  }
  const double peak = *std::max_element(s.begin(), s.end());
  double total = 0.0;
  for (double& e : s) total += (e = std::exp(e - peak));
  std::vector<double> g(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) g[j] += s[i] / total * u[i][j];
  }
  Mat y(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) y[i][j] = g[j] * v[i][j];
  }
  Mat f = ref_pkan(y, std::get<PkanBlock>(p.ffn.block));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) f[i][j] += x[i][j];
  }
  return f;
}

void check_close(const Tensor& t, const Mat& m, double tol = 1e-12) {
  REQUIRE(t.dim(0) == m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m[i].size(); ++j) CHECK(std::abs(t.at({i, j}) - m[i][j]) < tol);
  }
}

void zero(Tensor& t) {
  for (double& v : t.mutable_data()) v = 0.0;
}

double median_ms(const std::function<void()>& fn, int runs) {
  fn();
  std::vector<double> ms;
  for (int r = 0; r < runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  return 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
}

}  // namespace

TEST_CASE("channel gate") {
  std::mt19937_64 rng(21);
  GateParams p = GateParams::init(4, 4, rng);
  Tensor x = random_tensor({3, 4}, rng, -1, 1, false);
  check_close(channel_gate(x, p), ref_channel_gate(to_mat(x), p));

  Tensor col = Tensor::from({3, 4}, {0.3, 1, 2, 3, 0.3, 5, 6, 7, 0.3, 9, 1, 2});
  Tensor out = channel_gate(col, p);
  CHECK(out.at({0, 0}) == out.at({1, 0}));
  CHECK(out.at({1, 0}) == out.at({2, 0}));

  for (Tensor* t : {&p.reduce.weight, &p.reduce.bias, &p.expand.weight, &p.expand.bias}) zero(*t);
  Tensor half = channel_gate(x, p);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(half.data()[i] == doctest::Approx(x.data()[i] / 2));
}

TEST_CASE("spatial gate") {
  std::mt19937_64 rng(22);
  GateParams p = GateParams::init(4, 2, rng);
  Tensor x = random_tensor({3, 4}, rng, -1, 1, false);
  check_close(spatial_gate(x, p), ref_spatial_gate(to_mat(x), p));

  Tensor one = random_tensor({1, 4}, rng, -1, 1, false);
  Tensor y = spatial_gate(one, p);
  const double ratio = y.data()[0] / one.data()[0];
  for (std::size_t j = 1; j < 4; ++j) CHECK(y.data()[j] / one.data()[j] == doctest::Approx(ratio));

  zero(p.scorer.weight);
  zero(p.scorer.bias);
  Tensor half = spatial_gate(x, p);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(half.data()[i] == doctest::Approx(x.data()[i] / 2));
  CHECK_THROWS_AS(GateParams::init(6, 4, rng), ConfigError);
}

TEST_CASE("gates stay in the unit interval") {
  std::mt19937_64 rng(23);
  GateParams p = GateParams::init(8, 4, rng);
  Tensor x = Tensor::full({5, 8}, 1.0);
  Tensor big = random_tensor({5, 8}, rng, -50, 50, false);
  Tensor g = channel_gate(x, p);
  for (double v : g.to_vector()) CHECK((v > 0.0 && v < 1.0));
  Tensor s = spatial_gate(x, p);
  for (double v : s.to_vector()) CHECK((v > 0.0 && v < 1.0));
  for (double v : channel_gate(big, p).to_vector()) CHECK(std::isfinite(v));
}

TEST_CASE("PAA against a scalar reference") {
  std::mt19937_64 rng(24);
  for (GateOrder order : {GateOrder::kSaCa, GateOrder::kCaSa}) {
    PaaParams p = PaaParams::init(2, rng, order, FeedForwardKind::kPkan, 1, true);
    auto& block = std::get<PkanBlock>(p.ffn.block);
    fill_uniform(block.spline_coeffs, rng, -0.5, 0.5);
    fill_uniform(block.numerators, rng, -0.5, 0.5);
    Tensor x = random_tensor({3, 2}, rng, -1, 1, false);
    check_close(paa_forward(x, p), ref_paa(to_mat(x), p));
  }
  PaaParams p4 = PaaParams::init(8, rng);
  Tensor x = random_tensor({5, 8}, rng, -1, 1, false);
  check_close(paa_forward(x, p4), ref_paa(to_mat(x), p4));
}

TEST_CASE("PAA single token") {
  std::mt19937_64 rng(25);
  PaaParams p = PaaParams::init(4, rng);
  Tensor x = random_tensor({1, 4}, rng, -1, 1, false);
  PaaTrace tr;
  Tensor out = paa_forward(x, p, &tr);
  CHECK(tr.alpha.to_vector() == std::vector<double>{1.0});
  CHECK(max_abs_diff(tr.context.data(), tr.u.data()) < 1e-15);
  for (std::size_t j = 0; j < 4; ++j) CHECK(tr.y.data()[j] == doctest::Approx(tr.u.data()[j] * tr.v.data()[j]));
  const auto branch = p.ffn(tr.y).to_vector();
  for (std::size_t j = 0; j < 4; ++j) CHECK(out.data()[j] - x.data()[j] == doctest::Approx(branch[j]));
}

TEST_CASE("PAA with zero values is a constant shift") {
  std::mt19937_64 rng(26);
  PaaParams p = PaaParams::init(4, rng);
  zero(p.value.weight);
  zero(p.value.bias);
  const auto shift = p.ffn(Tensor::zeros({1, 4})).to_vector();
  for (int trial = 0; trial < 3; ++trial) {
    Tensor x = random_tensor({6, 4}, rng, -2, 2, false);
    Tensor out = paa_forward(x, p);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 4; ++j) CHECK(out.at({i, j}) - x.at({i, j}) == doctest::Approx(shift[j]));
    }
  }
}

TEST_CASE("PAA is permutation equivariant") {
  std::mt19937_64 rng(27);
  PaaParams p = PaaParams::init(8, rng);
  Tensor x = random_tensor({7, 8}, rng, -1, 1, false);
  std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  PaaTrace a, b;
  Tensor y = paa_forward(x, p, &a);
  Tensor yp = paa_forward(take_rows(x, perm), p, &b);
  CHECK(max_abs_diff(take_rows(a.y, perm).data(), b.y.data()) < 1e-12);
  CHECK(max_abs_diff(take_rows(y, perm).data(), yp.data()) < 1e-12);
  CHECK(max_abs_diff(a.context.data(), b.context.data()) < 1e-12);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(b.alpha.data()[i] == doctest::Approx(a.alpha.data()[perm[i]]));
}

TEST_CASE("gate order changes the output") {
  std::mt19937_64 rng(28);
  PaaParams p = PaaParams::init(8, rng, GateOrder::kSaCa);
  Tensor x = random_tensor({6, 8}, rng, -1, 1, false);
  const Tensor sa_ca = paa_forward(x, p);
  p.order = GateOrder::kCaSa;
  const Tensor ca_sa = paa_forward(x, p);
  CHECK(max_abs_diff(sa_ca.data(), ca_sa.data()) > 1e-9);
  CHECK(parse_gate_order("sa_ca") == GateOrder::kSaCa);
  CHECK(parse_gate_order("ca_sa") == GateOrder::kCaSa);
  CHECK(to_string(GateOrder::kCaSa) == "ca_sa");
  CHECK_THROWS_AS(parse_gate_order("cbam"), ConfigError);
}

TEST_CASE("PAA never materialises a token-by-token buffer") {
  std::mt19937_64 rng(29);
  const std::size_t n = 300, d = 16;
  PaaParams p = PaaParams::init(d, rng);
  Tensor x = random_tensor({n, d}, rng);
  {
    AllocationProbe probe;
    Tensor out = paa_forward(x, p);
    sum(out).backward();
    CHECK(probe.largest() < n * n);
    CHECK(probe.largest() >= n * d);
  }
  MhaParams m = MhaParams::init(d, 4, rng);
  AllocationProbe probe;
  mha_forward(x, m);
  CHECK(probe.largest() >= n * n);
}

TEST_CASE("PAA rejects bad input") {
  std::mt19937_64 rng(30);
  PaaParams p = PaaParams::init(4, rng);
  CHECK_THROWS_AS(paa_forward(Tensor::zeros({3, 5}), p), DimensionError);
  CHECK_THROWS_AS(paa_forward(Tensor::zeros({0, 4}), p), DimensionError);
}

TEST_CASE("MHA examples") {
  std::mt19937_64 rng(31);
  MhaParams p = MhaParams::init(4, 2, rng);
  Tensor one = random_tensor({1, 4}, rng, -1, 1, false);
  CHECK(max_abs_diff(mha_forward(one, p).data(), p.output(p.value(one)).data()) < 1e-14);

  Tensor row = random_tensor({1, 4}, rng, -1, 1, false);
  Tensor same = take_rows(row, std::vector<std::size_t>{0, 0, 0});
  Tensor out = mha_forward(same, p);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(out.at({0, j}) == out.at({1, j}));
    CHECK(out.at({0, j}) == out.at({2, j}));
  }
  CHECK_THROWS_AS(MhaParams::init(6, 4, rng), ConfigError);
}

TEST_CASE("MHA hand evaluation, two tokens, one head") {
  std::mt19937_64 rng(32);
  MhaParams p = MhaParams::init(2, 1, rng);
  p.query.weight = Tensor::from({2, 2}, {1, 0, 0, 1});
  p.key.weight = Tensor::from({2, 2}, {2, 0, 0, 1});
  p.value.weight = Tensor::from({2, 2}, {1, 1, 0, 1});
  p.output.weight = Tensor::from({2, 2}, {1, 0, 0, 1});
  for (Tensor* b : {&p.query.bias, &p.key.bias, &p.value.bias, &p.output.bias}) zero(*b);
  Tensor x = Tensor::from({2, 2}, {1, 0, 0, 1});
  // q = x, k = [[2,0],[0,1]], v = [[1,1],[0,1]]; logits / sqrt(2)
  const double s = 1.0 / std::sqrt(2.0);
  const double a0 = 1.0 / (1.0 + std::exp(-2.0 * s));  // row 0: logits [2s, 0]
  const double a1 = 1.0 / (1.0 + std::exp(-1.0 * s));  // row 1: logits [0, s], weight on token 1
  Tensor out = mha_forward(x, p);
  CHECK(out.at({0, 0}) == doctest::Approx(a0));
  CHECK(out.at({0, 1}) == doctest::Approx(1.0));
  CHECK(out.at({1, 0}) == doctest::Approx(1.0 - a1));
  CHECK(out.at({1, 1}) == doctest::Approx(1.0));
}

TEST_CASE("attention gradients") {
  std::mt19937_64 rng(33);
  {
    PaaParams p = PaaParams::init(4, rng, GateOrder::kSaCa, FeedForwardKind::kPkan, 4, true);
    auto& block = std::get<PkanBlock>(p.ffn.block);
    fill_uniform(block.spline_coeffs, rng, -0.5, 0.5);
    Tensor x = random_tensor({5, 4}, rng);
    ParamList ps;
    p.collect("paa", ps);
    std::vector<Tensor> ts{x};
    for (auto& e : ps) ts.push_back(e.tensor);
    Tensor w = random_tensor({5, 4}, rng, -1, 1, false);
    const GradCheckReport r = grad_check([&] { return sum(paa_forward(x, p) * w); }, ts);
    CHECK(r.entries >= 100);
    CHECK(r.max_rel_error < 1e-4);
  }
  {
    MhaParams p = MhaParams::init(4, 2, rng);
    Tensor q = random_tensor({3, 4}, rng);
    Tensor kv = random_tensor({5, 4}, rng);
    ParamList ps;
    p.collect("mha", ps);
    std::vector<Tensor> ts{q, kv};
    for (auto& e : ps) ts.push_back(e.tensor);
    Tensor w = random_tensor({3, 4}, rng, -1, 1, false);
    const GradCheckReport r = grad_check([&] { return sum(mha_attend(q, kv, kv, p) * w); }, ts);
    CHECK(r.entries >= 80);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("analytic attention FLOPs") {
  for (double d : {16.0, 64.0, 256.0}) {
    for (double n : {10.0, 100.0, 1000.0}) {
      CHECK(attention_flops(AttentionKind::kPaa, 2 * n, d) == 2 * attention_flops(AttentionKind::kPaa, n, d));
      CHECK(attention_flops(AttentionKind::kMha, n, d) == 2 * n * n * d + 4 * n * d * d);
      CHECK(attention_flops(AttentionKind::kPaa, n + 1, d) > attention_flops(AttentionKind::kPaa, n, d));
      CHECK(attention_flops(AttentionKind::kMha, n, d + 1) > attention_flops(AttentionKind::kMha, n, d));
    }
  }
  const double big = 1e7;
  CHECK(attention_flops(AttentionKind::kMha, 2 * big, 64) / attention_flops(AttentionKind::kMha, big, 64) ==
        doctest::Approx(4.0).epsilon(1e-4));
  CHECK_THROWS_AS(attention_flops(AttentionKind::kPaa, 0.0, 4.0), ConfigError);
  // PAA < MHA  <=>  N > (3d + 25) / 2.
  CHECK(attention_crossover(256) == 397);
  for (std::size_t d : {16u, 64u, 256u}) {
    const std::size_t n0 = attention_crossover(d);
    const auto dd = static_cast<double>(d);
    CHECK(attention_flops(AttentionKind::kPaa, n0, dd) < attention_flops(AttentionKind::kMha, n0, dd));
    CHECK(attention_flops(AttentionKind::kPaa, n0 - 1, dd) >= attention_flops(AttentionKind::kMha, n0 - 1, dd));
  }
  CHECK(parse_attention_kind("mha") == AttentionKind::kMha);
  CHECK_THROWS_AS(parse_attention_kind("linear"), ConfigError);
}

TEST_CASE("wall-time scaling with token count") {
  std::mt19937_64 rng(34);
  const std::size_t d = 64;
  const PaaParams paa = PaaParams::init(d, rng);
  const MhaParams mha = MhaParams::init(d, 4, rng);
  NoGradGuard guard;
  std::vector<double> paa_ms, mha_ms;
  for (std::size_t n : {256u, 512u, 1024u}) {
    const Tensor x = random_tensor({n, d}, rng, -1, 1, false);
    paa_ms.push_back(median_ms([&] { paa_forward(x, paa); }, 20));
    mha_ms.push_back(median_ms([&] { mha_forward(x, mha); }, 20));
  }
  MESSAGE("paa ms " << paa_ms[0] << " " << paa_ms[1] << " " << paa_ms[2]);
  MESSAGE("mha ms " << mha_ms[0] << " " << mha_ms[1] << " " << mha_ms[2]);
  CHECK(paa_ms[1] / paa_ms[0] < 2.5);
  CHECK(paa_ms[2] / paa_ms[1] < 2.5);
  CHECK(mha_ms[2] / mha_ms[1] > 3.0);
}
