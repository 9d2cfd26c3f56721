#include "akt/kan.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "akt/error.hpp"

namespace akt {

namespace {

// Least-squares fit of the safe rational form to SiLU on [-3, 3]
// (tests/oracles/fit_pau_silu.py); max abs deviation ~1.2e-6.
constexpr std::array<double, 6> kSiluNumerator = {
    3.2571309761809999e-07, 0.50000000000944012,   0.24999736449133508,
    0.053265205058870613,   0.0058025785718030997, 0.00027513837453173849,
};
constexpr std::array<double, 4> kSiluDenominator = {
    -4.2352580995854014e-13,
    0.10653041013525986,
    -4.1386497526951821e-14,
    0.0005502767469700206,
};

// Nonzero basis functions of `degree` on knot span s (indices s-degree..s).
void span_basis(std::span<const double> t, std::size_t s, std::size_t degree, double x, double* out) {
  double left[16];
  double right[16];
  out[0] = 1.0;
  for (std::size_t j = 1; j <= degree; ++j) {
    left[j] = x - t[s + 1 - j];
    right[j] = t[s + j] - x;
    double saved = 0.0;
    for (std::size_t r = 0; r < j; ++r) {
      const double temp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    out[j] = saved;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// BSplineGrid

BSplineGrid BSplineGrid::uniform(double lo, double hi, std::size_t grid_count, std::size_t degree) {
  if (grid_count < 1) throw ConfigError("BSplineGrid: grid count must be at least 1");
  if (degree < 1 || degree > 8) throw ConfigError("BSplineGrid: degree must lie in [1, 8]");
  if (!(lo < hi)) throw ConfigError("BSplineGrid: empty interval");
  BSplineGrid g;
  g.lo_ = lo;
  g.hi_ = hi;
  g.grid_count_ = grid_count;
  g.degree_ = degree;
  const double h = (hi - lo) / static_cast<double>(grid_count);
  const std::size_t n_knots = grid_count + 2 * degree + 1;
  g.knots_.resize(n_knots);
  for (std::size_t i = 0; i < n_knots; ++i) {
    g.knots_[i] = lo + (static_cast<double>(i) - static_cast<double>(degree)) * h;
  }
  // Pin the interior end points exactly.
  g.knots_[degree] = lo;
  g.knots_[degree + grid_count] = hi;
  return g;
}

void BSplineGrid::evaluate(double x, std::span<double> values, std::span<double> derivs) const {
  const std::size_t nb = basis_count();
  const std::size_t k = degree_;
  std::fill(values.begin(), values.end(), 0.0);
  if (!derivs.empty()) std::fill(derivs.begin(), derivs.end(), 0.0);
  const bool clamped = x < lo_ || x > hi_;
  x = std::clamp(x, lo_, hi_);
  const double h = (hi_ - lo_) / static_cast<double>(grid_count_);
  auto cell = static_cast<std::size_t>(std::max(0.0, std::floor((x - lo_) / h)));
  cell = std::min(cell, grid_count_ - 1);
  std::size_t s = k + cell;
  // Guard against rounding at knot boundaries.
  while (s > k && x < knots_[s]) --s;
  while (s + 1 < k + grid_count_ && x >= knots_[s + 1]) ++s;

  double full[17];
  span_basis(knots_, s, k, x, full);
  for (std::size_t r = 0; r <= k; ++r) values[s - k + r] = full[r];

  if (derivs.empty() || clamped) return;
  double lower[17];
  span_basis(knots_, s, k - 1, x, lower);
  // lower[r] is B_{s-k+1+r, k-1}
  auto lower_at = [&](std::size_t i) -> double {
    if (i + k < s + 1 || i > s) return 0.0;
    return lower[i - (s + 1 - k)];
  };
  const double kd = static_cast<double>(k);
  for (std::size_t i = s - k; i <= s && i < nb; ++i) {
    const double a = lower_at(i) / (knots_[i + k] - knots_[i]);
    const double b = lower_at(i + 1) / (knots_[i + k + 1] - knots_[i + 1]);
    derivs[i] = kd * (a - b);
  }
}

std::vector<double> BSplineGrid::basis(double x) const {
  std::vector<double> out(basis_count());
  evaluate(x, out, {});
  return out;
}

Tensor bspline_basis(const Tensor& x, const BSplineGrid& grid) {
  const std::size_t nb = grid.basis_count();
  const auto xv = x.data();
  std::vector<double> values(xv.size() * nb);
  auto derivs = std::make_shared<std::vector<double>>(xv.size() * nb);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    grid.evaluate(xv[i], std::span<double>(values).subspan(i * nb, nb),
                  std::span<double>(*derivs).subspan(i * nb, nb));
  }
  Shape shape = x.shape();
  shape.push_back(nb);
  return make_result("bspline_basis", std::move(shape), std::move(values), {x},
                     [derivs, nb](std::span<const double> g, std::span<const double>,
                                  std::span<const std::span<double>> grads) {
                       for (std::size_t i = 0; i < grads[0].size(); ++i) {
                         double acc = 0.0;
                         for (std::size_t j = 0; j < nb; ++j) acc += g[i * nb + j] * (*derivs)[i * nb + j];
                         grads[0][i] += acc;
                       }
                     });
}

// ---------------------------------------------------------------------------
// PAU

std::span<const double> silu_fit_numerator() { return kSiluNumerator; }
std::span<const double> silu_fit_denominator() { return kSiluDenominator; }

PauParams PauParams::from(std::vector<double> numerator, std::vector<double> denominator, double scale) {
  if (numerator.size() < 2 || denominator.empty()) {
    throw ConfigError("PauParams: orders must satisfy m >= 1 and n >= 1");
  }
  PauParams p;
  const std::size_t m1 = numerator.size();
  const std::size_t n = denominator.size();
  p.numerator = Tensor::from({m1}, std::move(numerator), true);
  p.denominator = Tensor::from({n}, std::move(denominator), true);
  p.scale = Tensor::from({1}, {scale}, true);
  return p;
}

PauParams PauParams::silu_fit() {
  return from({kSiluNumerator.begin(), kSiluNumerator.end()}, {kSiluDenominator.begin(), kSiluDenominator.end()});
}

namespace {

struct PauTerms {
  double p = 0.0;   // P(x)
  double dp = 0.0;  // P'(x)
  double r = 0.0;   // inner polynomial b1 x + ... + bn x^n
  double dr = 0.0;
};

PauTerms pau_terms(double x, const double* a, std::size_t m1, const double* b, std::size_t n) {
  PauTerms t;
  for (std::size_t i = m1; i-- > 0;) {
    t.dp = t.dp * x + t.p;
    t.p = t.p * x + a[i];
  }
  // r = x * (b1 + b2 x + ... + bn x^{n-1})
  double q = 0.0;
  double dq = 0.0;
  for (std::size_t j = n; j-- > 0;) {
    dq = dq * x + q;
    q = q * x + b[j];
  }
  t.r = x * q;
  t.dr = q + x * dq;
  return t;
}

}  // namespace

double pau_denominator(double x, std::span<const double> denominator) {
  const PauTerms t = pau_terms(x, nullptr, 0, denominator.data(), denominator.size());
  return 1.0 + std::abs(t.r);
}

double pau_value(double x, std::span<const double> numerator, std::span<const double> denominator, double scale) {
  const PauTerms t = pau_terms(x, numerator.data(), numerator.size(), denominator.data(), denominator.size());
  return scale * t.p / (1.0 + std::abs(t.r));
}

Tensor grouped_pau(const Tensor& x, const Tensor& numerators, const Tensor& denominator, const Tensor& scales) {
  if (numerators.rank() != 2) throw DimensionError("grouped_pau: numerators must be [groups x (m+1)]");
  const std::size_t groups = numerators.dim(0);
  const std::size_t m1 = numerators.dim(1);
  const std::size_t n = denominator.numel();
  if (scales.numel() != groups) throw DimensionError("grouped_pau: one scale per group required");
  if (m1 < 2 || n < 1) throw ConfigError("grouped_pau: orders must satisfy m >= 1 and n >= 1");
  const std::size_t width = x.rank() == 0 ? 1 : x.shape().back();
  if (groups == 0 || width % groups != 0) {
    throw ConfigError("grouped_pau: width " + std::to_string(width) + " is not divisible into " +
                      std::to_string(groups) + " groups");
  }
  const std::size_t per_group = width / groups;
  const auto xv = x.data();
  const auto av = numerators.data();
  const auto bv = denominator.data();
  const auto wv = scales.data();
  std::vector<double> values(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const std::size_t g = (i % width) / per_group;
    const PauTerms t = pau_terms(xv[i], av.data() + g * m1, m1, bv.data(), n);
    values[i] = wv[g] * t.p / (1.0 + std::abs(t.r));
  }
  return make_result(
      "grouped_pau", x.shape(), std::move(values), {x, numerators, denominator, scales},
      [x, numerators, denominator, scales, width, per_group, m1, n](
          std::span<const double> g, std::span<const double>, std::span<const std::span<double>> grads) {
        const auto xv = x.data();
        const auto av = numerators.data();
        const auto bv = denominator.data();
        const auto wv = scales.data();
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const std::size_t grp = (i % width) / per_group;
          const double xi = xv[i];
          const PauTerms t = pau_terms(xi, av.data() + grp * m1, m1, bv.data(), n);
          const double sign = t.r > 0 ? 1.0 : (t.r < 0 ? -1.0 : 0.0);
          const double q = 1.0 + std::abs(t.r);
          const double w = wv[grp];
          const double gi = g[i];
          if (!grads[0].empty()) grads[0][i] += gi * w * (t.dp * q - t.p * sign * t.dr) / (q * q);
          if (!grads[1].empty()) {
            double power = 1.0;
            for (std::size_t k = 0; k < m1; ++k) {
              grads[1][grp * m1 + k] += gi * w * power / q;
              power *= xi;
            }
          }
          if (!grads[2].empty() && sign != 0.0) {
            const double common = -gi * w * t.p * sign / (q * q);
            double power = xi;
            for (std::size_t j = 0; j < n; ++j) {
              grads[2][j] += common * power;
              power *= xi;
            }
          }
          if (!grads[3].empty()) grads[3][grp] += gi * t.p / q;
        }
      });
}

Tensor pau_eval(const Tensor& x, const PauParams& p) {
  const std::size_t m1 = p.numerator.numel();
  // A scalar input is treated as a single channel.
  if (x.rank() == 0) return reshape(pau_eval(reshape(x, {1}), p), {});
  return grouped_pau(x, reshape(p.numerator, {1, m1}), p.denominator, p.scale);
}

// ---------------------------------------------------------------------------
// KAN linear

KanLinearLayer KanLinearLayer::init(std::size_t n_in, std::size_t n_out, Rng& rng, KanBase base,
                                    const BSplineGrid& grid) {
  if (n_in == 0 || n_out == 0) throw ConfigError("KanLinearLayer: zero-width layer");
  KanLinearLayer l;
  l.grid = grid;
  const double bound = 1.0 / std::sqrt(static_cast<double>(n_in));
  l.base_weight = uniform_param({n_out, n_in}, bound, rng);
  l.spline_weight = Tensor::full({n_out, n_in}, 1.0, true);
  l.coeffs = normal_param({n_out, n_in, grid.basis_count()}, 0.1 * bound, rng);
  l.base = base;
  if (base == KanBase::kPau) l.pau = PauParams::silu_fit();
  return l;
}

void KanLinearLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".base_weight", base_weight});
  out.push_back({prefix + ".spline_weight", spline_weight});
  out.push_back({prefix + ".coeffs", coeffs});
  if (base == KanBase::kPau) {
    out.push_back({prefix + ".pau.numerator", pau.numerator});
    out.push_back({prefix + ".pau.denominator", pau.denominator});
    out.push_back({prefix + ".pau.scale", pau.scale});
  }
}

double kan_phi(double x, double w_b, double w_s, std::span<const double> coeffs, const BSplineGrid& grid,
               KanBase base, const PauParams* pau) {
  if (coeffs.size() != grid.basis_count()) throw DimensionError("kan_phi: coefficient count does not match grid");
  double base_value = 0.0;
  if (base == KanBase::kSilu) {
    base_value = x / (1.0 + std::exp(-x));
  } else {
    if (pau == nullptr) throw UsageError("kan_phi: PAU base requires parameters");
    base_value = pau_value(x, pau->numerator.data(), pau->denominator.data(), pau->scale.item());
  }
  const std::vector<double> b = grid.basis(x);
  double spline = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) spline += coeffs[i] * b[i];
  return w_b * base_value + w_s * spline;
}

Tensor kan_linear_forward(const Tensor& x, const KanLinearLayer& layer) {
  const std::size_t n_in = layer.in_dim();
  const std::size_t n_out = layer.out_dim();
  const std::size_t nb = layer.grid.basis_count();
  if (x.rank() != 2 || x.dim(1) != n_in) {
    throw DimensionError("kan_linear_forward: input " + shape_str(x.shape()) + " does not have width " +
                         std::to_string(n_in));
  }
  const std::size_t batch = x.dim(0);
  const Tensor activated = layer.base == KanBase::kSilu ? silu(x) : pau_eval(x, layer.pau);
  const Tensor base = matmul(activated, transpose(layer.base_weight));
  const Tensor basis = reshape(bspline_basis(x, layer.grid), {batch, n_in * nb});
  const Tensor scaled = reshape(mul(layer.coeffs, reshape(layer.spline_weight, {n_out, n_in, 1})), {n_out, n_in * nb});
  return base + matmul(basis, transpose(scaled));
}

std::size_t kan_linear_param_count(std::size_t n_in, std::size_t n_out, const BSplineGrid& grid) {
  return n_in * n_out * (grid.basis_count() + 2);
}

// ---------------------------------------------------------------------------
// PKAN

PkanBlock PkanBlock::init(std::size_t dim, std::size_t hidden, std::size_t groups, bool keep_spline, Rng& rng) {
  if (groups == 0 || hidden % groups != 0) {
    throw ConfigError("PkanBlock: hidden width " + std::to_string(hidden) + " does not split into " +
                      std::to_string(groups) + " groups");
  }
  PkanBlock b;
  b.input = Linear::init(dim, hidden, rng);
  b.output = Linear::init(hidden, dim, rng);
  std::vector<double> nums;
  for (std::size_t g = 0; g < groups; ++g) nums.insert(nums.end(), kSiluNumerator.begin(), kSiluNumerator.end());
  b.numerators = Tensor::from({groups, kSiluNumerator.size()}, std::move(nums), true);
  b.denominator = Tensor::from({kSiluDenominator.size()}, {kSiluDenominator.begin(), kSiluDenominator.end()}, true);
  b.scales = Tensor::full({groups}, 1.0, true);
  b.groups = groups;
  b.keep_spline = keep_spline;
  if (keep_spline) b.spline_coeffs = Tensor::zeros({hidden, b.grid.basis_count()}, true);
  return b;
}

void PkanBlock::collect(const std::string& prefix, ParamList& out) const {
  input.collect(prefix + ".input", out);
  out.push_back({prefix + ".numerators", numerators});
  out.push_back({prefix + ".denominator", denominator});
  out.push_back({prefix + ".scales", scales});
  if (keep_spline) out.push_back({prefix + ".spline_coeffs", spline_coeffs});
  output.collect(prefix + ".output", out);
}

Tensor pkan_forward(const Tensor& x, const PkanBlock& block) {
  const Tensor z = block.input(x);
  if (z.dim(1) % block.groups != 0) throw ConfigError("pkan_forward: hidden width not divisible by group count");
  Tensor act = grouped_pau(z, block.numerators, block.denominator, block.scales);
  if (block.keep_spline) act = act + sum(mul(bspline_basis(z, block.grid), block.spline_coeffs), 2);
  return block.output(act);
}

// ---------------------------------------------------------------------------
// Baselines

Mlp Mlp::init(std::size_t dim, std::size_t hidden, Rng& rng) {
  return {Linear::init(dim, hidden, rng), Linear::init(hidden, dim, rng)};
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  input.collect(prefix + ".input", out);
  output.collect(prefix + ".output", out);
}

Tensor mlp_forward(const Tensor& x, const Mlp& mlp) { return mlp.output(silu(mlp.input(x))); }

KanPair KanPair::init(std::size_t dim, std::size_t hidden, Rng& rng, KanBase base) {
  KanPair p;
  p.first = KanLinearLayer::init(dim, hidden, rng, base);
  p.second = KanLinearLayer::init(hidden, dim, rng, base);
  return p;
}

void KanPair::collect(const std::string& prefix, ParamList& out) const {
  first.collect(prefix + ".first", out);
  second.collect(prefix + ".second", out);
}

Tensor kan_pair_forward(const Tensor& x, const KanPair& pair) {
  return kan_linear_forward(kan_linear_forward(x, pair.first), pair.second);
}

FeedForwardKind parse_feed_forward_kind(const std::string& name) {
  if (name == "pkan") return FeedForwardKind::kPkan;
  if (name == "mlp") return FeedForwardKind::kMlp;
  if (name == "kan") return FeedForwardKind::kKan;
  throw ConfigError("unknown feed-forward kind '" + name + "' (expected pkan, mlp or kan)");
}

std::string to_string(FeedForwardKind kind) {
  switch (kind) {
    case FeedForwardKind::kPkan:
      return "pkan";
    case FeedForwardKind::kMlp:
      return "mlp";
    case FeedForwardKind::kKan:
      return "kan";
  }
  return "pkan";
}

FeedForward FeedForward::init(FeedForwardKind kind, std::size_t dim, std::size_t hidden, std::size_t groups,
                              bool keep_spline, Rng& rng) {
  switch (kind) {
    case FeedForwardKind::kPkan:
      return {PkanBlock::init(dim, hidden, groups, keep_spline, rng)};
    case FeedForwardKind::kMlp:
      return {Mlp::init(dim, hidden, rng)};
    case FeedForwardKind::kKan:
      return {KanPair::init(dim, hidden, rng)};
  }
  throw ConfigError("unknown feed-forward kind");
}

Tensor FeedForward::operator()(const Tensor& x) const {
  return std::visit(
      [&x](const auto& b) -> Tensor {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, PkanBlock>) {
          return pkan_forward(x, b);
        } else if constexpr (std::is_same_v<T, Mlp>) {
          return mlp_forward(x, b);
        } else {
          return kan_pair_forward(x, b);
        }
      },
      block);
}

void FeedForward::collect(const std::string& prefix, ParamList& out) const {
  std::visit([&](const auto& b) { b.collect(prefix, out); }, block);
}

}  // namespace akt
