#include "akt/synthfield.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "akt/error.hpp"

namespace akt {

namespace {

constexpr double kMarginPx = 12.0;

struct Rgb {
  double r, g, b;
};

constexpr Rgb kSoil{0.45, 0.36, 0.26};
constexpr Rgb kPlant{0.20, 0.75, 0.15};
constexpr Rgb kWeed{0.60, 0.55, 0.10};

void check_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("expected an [H x W x 3] image, got " + shape_str(image.shape()));
  }
}

/// Output pixel (x, y) takes the bilinear source value at `inverse(x, y)`,
/// with pixel centres at half-integers and edge clamping.
template <typename Map>
Tensor warp(const Tensor& image, Map inverse) {
  const std::size_t h = image.dim(0), w = image.dim(1);
  const auto src = image.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const Point p = inverse(Point{static_cast<double>(j) + 0.5, static_cast<double>(i) + 0.5});
      const double fx = std::clamp(p.x - 0.5, 0.0, static_cast<double>(w - 1));
      const double fy = std::clamp(p.y - 0.5, 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v00 = src[(y0 * w + x0) * 3 + c], v01 = src[(y0 * w + x1) * 3 + c];
        const double v10 = src[(y1 * w + x0) * 3 + c], v11 = src[(y1 * w + x1) * 3 + c];
        out[(i * w + j) * 3 + c] = (1 - ay) * ((1 - ax) * v00 + ax * v01) + ay * ((1 - ax) * v10 + ax * v11);
      }
    }
  }
  return Tensor::from(image.shape(), std::move(out));
}

template <typename Fn>
Tensor map_pixels(const Tensor& image, Fn fn) {
  std::vector<double> v = image.to_vector();
  for (double& x : v) x = std::clamp(fn(x), 0.0, 1.0);
  return Tensor::from(image.shape(), std::move(v));
}

void paint_blob(std::vector<double>& img, std::size_t w, std::size_t h, const Plant& blob, const Rgb& color) {
  const double sigma = blob.radius / 2.0;
  const double reach = 2.0 * blob.radius;
  const auto lo_x = static_cast<long>(std::floor(blob.center.x - reach));
  const auto hi_x = static_cast<long>(std::ceil(blob.center.x + reach));
  const auto lo_y = static_cast<long>(std::floor(blob.center.y - reach));
  const auto hi_y = static_cast<long>(std::ceil(blob.center.y + reach));
  for (long i = std::max(lo_y, 0L); i <= std::min(hi_y, static_cast<long>(h) - 1); ++i) {
    for (long j = std::max(lo_x, 0L); j <= std::min(hi_x, static_cast<long>(w) - 1); ++j) {
      const double dx = static_cast<double>(j) + 0.5 - blob.center.x;
      const double dy = static_cast<double>(i) + 0.5 - blob.center.y;
      const double a = blob.intensity * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      double* px = &img[(static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)) * 3];
      px[0] = px[0] * (1 - a) + color.r * a;
      px[1] = px[1] * (1 - a) + color.g * a;
      px[2] = px[2] * (1 - a) + color.b * a;
    }
  }
}

}  // namespace

void FieldConfig::validate() const {
  if (rows == 0) throw ConfigError("field needs at least one row");
  if (!(row_spacing_m > 0.0) || !(interval_m > 0.0) || !(gsd_mm > 0.0)) {
    throw ConfigError("row spacing, interval and gsd must be positive");
  }
  if (!(emergence >= 0.0 && emergence <= 1.0)) throw ConfigError("emergence must lie in [0, 1]");
  if (!(jitter_m >= 0.0) || !(weed_density >= 0.0)) throw ConfigError("jitter and weed density must be non-negative");
  if (seeds_per_row() == 0) throw ConfigError("plot needs at least one seed per row");
  if (static_cast<double>(width) < interval_px() || height == 0) {
    throw ConfigError("image of width " + std::to_string(width) + " px cannot hold one in-row interval of " +
                      std::to_string(interval_px()) + " px");
  }
}

std::vector<Point> FieldScene::ground_truth() const {
  std::vector<Point> out;
  out.reserve(plants.size());
  for (const Plant& p : plants) out.push_back(p.center);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> FieldScene::reference_pairs() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 1; i < plants.size(); ++i) {
    if (plants[i].row == plants[i - 1].row) out.emplace_back(i - 1, i);
  }
  return out;
}

FieldScene generate_field(const FieldConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);
  const double ipx = cfg.interval_px(), rpx = cfg.row_spacing_px(), jit = cfg.jitter_px();
  const std::size_t per_row = cfg.seeds_per_row();
  const double extent_x = static_cast<double>(per_row - 1) * ipx;
  const double extent_y = static_cast<double>(cfg.rows - 1) * rpx;

  double ox = 0.0;
  if (extent_x + 2 * kMarginPx <= w) {
    ox = kMarginPx + unit(rng) * (w - 2 * kMarginPx - extent_x);
  } else {
    // Window lies inside the row extent: ox in [w - margin - extent, margin].
    ox = kMarginPx - unit(rng) * (extent_x + 2 * kMarginPx - w);
  }
  double oy = 0.0;
  if (extent_y + 2 * kMarginPx <= h) {
    oy = kMarginPx + unit(rng) * (h - 2 * kMarginPx - extent_y);
  } else {
    const auto anchor = std::min(static_cast<std::size_t>(unit(rng) * static_cast<double>(cfg.rows)), cfg.rows - 1);
    const double lo = std::min(kMarginPx, h / 2), hi = std::max(h - kMarginPx, h / 2);
    oy = lo + unit(rng) * (hi - lo) - static_cast<double>(anchor) * rpx;
  }

  FieldScene scene;
  scene.width = cfg.width;
  scene.height = cfg.height;
  scene.gsd_mm = cfg.gsd_mm;
  scene.row_spacing_px = rpx;
  scene.texture_seed = derive_seed(cfg.seed, 1);
  for (std::size_t r = 0; r < cfg.rows; ++r) {
    for (std::size_t s = 0; s < per_row; ++s) {
      const bool emerged = unit(rng) < cfg.emergence;
      const double jx = gauss(rng) * jit, jy = gauss(rng) * jit;
      const double radius = 6.0 + 4.0 * unit(rng);
      const double intensity = 0.85 + 0.15 * unit(rng);
      if (!emerged) continue;
      const Point c{ox + static_cast<double>(s) * ipx + jx, oy + static_cast<double>(r) * rpx + jy};
      if (c.x < 0.0 || c.x >= w || c.y < 0.0 || c.y >= h) continue;
      scene.plants.push_back(Plant{c, radius, intensity, r, s});
    }
  }

  const double area_m2 = w * h * (cfg.gsd_mm / 1000.0) * (cfg.gsd_mm / 1000.0);
  if (cfg.weed_density > 0.0) {
    std::poisson_distribution<std::size_t> count(cfg.weed_density * area_m2);
    const std::size_t n = count(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const Point c{unit(rng) * w, unit(rng) * h};
      const double radius = 3.0 + 3.0 * unit(rng);
      scene.weeds.push_back(Plant{c, radius, 0.9, 0, 0});
    }
  }
  return scene;
}

Tensor render(const FieldScene& scene) {
  const std::size_t w = scene.width, h = scene.height;
  Rng rng(scene.texture_seed);
  std::normal_distribution<double> coarse(0.0, 0.04), fine(0.0, 0.02);

  constexpr std::size_t kCell = 8;
  const std::size_t gw = w / kCell + 2, gh = h / kCell + 2;
  std::vector<double> grid(gw * gh * 3);
  for (double& v : grid) v = coarse(rng);

  std::vector<double> img(h * w * 3);
  for (std::size_t i = 0; i < h; ++i) {
    const double fy = (static_cast<double>(i) + 0.5) / kCell;
    const auto y0 = static_cast<std::size_t>(fy);
    const double ay = fy - static_cast<double>(y0);
    for (std::size_t j = 0; j < w; ++j) {
      const double fx = (static_cast<double>(j) + 0.5) / kCell;
      const auto x0 = static_cast<std::size_t>(fx);
      const double ax = fx - static_cast<double>(x0);
      const double base[3] = {kSoil.r, kSoil.g, kSoil.b};
      for (std::size_t c = 0; c < 3; ++c) {
        auto g = [&](std::size_t y, std::size_t x) { return grid[(y * gw + x) * 3 + c]; };
        const double n = (1 - ay) * ((1 - ax) * g(y0, x0) + ax * g(y0, x0 + 1)) +
                         ay * ((1 - ax) * g(y0 + 1, x0) + ax * g(y0 + 1, x0 + 1));
        img[(i * w + j) * 3 + c] = base[c] + n + fine(rng);
      }
    }
  }
  for (const Plant& weed : scene.weeds) paint_blob(img, w, h, weed, kWeed);
  for (const Plant& plant : scene.plants) paint_blob(img, w, h, plant, kPlant);
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  return Tensor::from({h, w, 3}, std::move(img));
}

AugmentOp parse_augment_op(const std::string& name) {
  if (name == "rotate") return AugmentOp::kRotate;
  if (name == "hflip") return AugmentOp::kHflip;
  if (name == "vflip") return AugmentOp::kVflip;
  if (name == "contrast") return AugmentOp::kContrast;
  if (name == "brightness") return AugmentOp::kBrightness;
  if (name == "gauss_noise") return AugmentOp::kGaussNoise;
  if (name == "rescale") return AugmentOp::kRescale;
  if (name == "cutmix") return AugmentOp::kCutmix;
  throw ConfigError("unknown augmentation '" + name + "'");
}

std::string to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::kRotate: return "rotate";
    case AugmentOp::kHflip: return "hflip";
    case AugmentOp::kVflip: return "vflip";
    case AugmentOp::kContrast: return "contrast";
    case AugmentOp::kBrightness: return "brightness";
    case AugmentOp::kGaussNoise: return "gauss_noise";
    case AugmentOp::kRescale: return "rescale";
    case AugmentOp::kCutmix: return "cutmix";
  }
  return "unknown";
}

Sample rotate(const Sample& s, double degrees) {
  check_image(s.image);
  const double t = degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(t), st = std::sin(t);
  const Point c{static_cast<double>(s.image.dim(1)) / 2.0, static_cast<double>(s.image.dim(0)) / 2.0};
  Sample out;
  out.image = warp(s.image, [&](Point p) {
    const double dx = p.x - c.x, dy = p.y - c.y;
    return Point{c.x + ct * dx + st * dy, c.y - st * dx + ct * dy};
  });
  for (const Point& p : s.points) {
    const double dx = p.x - c.x, dy = p.y - c.y;
    out.points.push_back({c.x + ct * dx - st * dy, c.y + st * dx + ct * dy});
  }
  return out;
}

Sample hflip(const Sample& s) {
  check_image(s.image);
  const double w = static_cast<double>(s.image.dim(1));
  Sample out;
  out.image = warp(s.image, [&](Point p) { return Point{w - p.x, p.y}; });
  for (const Point& p : s.points) out.points.push_back({w - p.x, p.y});
  return out;
}

Sample vflip(const Sample& s) {
  check_image(s.image);
  const double h = static_cast<double>(s.image.dim(0));
  Sample out;
  out.image = warp(s.image, [&](Point p) { return Point{p.x, h - p.y}; });
  for (const Point& p : s.points) out.points.push_back({p.x, h - p.y});
  return out;
}

Sample adjust_contrast(const Sample& s, double factor) {
  check_image(s.image);
  const auto d = s.image.data();
  double m = 0.0;
  for (double v : d) m += v;
  m /= static_cast<double>(d.size());
  return Sample{map_pixels(s.image, [&](double v) { return (v - m) * factor + m; }), s.points};
}

Sample adjust_brightness(const Sample& s, double offset) {
  check_image(s.image);
  return Sample{map_pixels(s.image, [&](double v) { return v + offset; }), s.points};
}

Sample add_gauss_noise(const Sample& s, double sigma, Rng& rng) {
  check_image(s.image);
  std::normal_distribution<double> noise(0.0, sigma);
  return Sample{map_pixels(s.image, [&](double v) { return v + noise(rng); }), s.points};
}

Sample rescale(const Sample& s, double factor) {
  check_image(s.image);
  if (!(factor > 0.0)) throw ConfigError("rescale factor must be positive");
  const Point c{static_cast<double>(s.image.dim(1)) / 2.0, static_cast<double>(s.image.dim(0)) / 2.0};
  Sample out;
  out.image = warp(s.image, [&](Point p) { return Point{c.x + (p.x - c.x) / factor, c.y + (p.y - c.y) / factor}; });
  for (const Point& p : s.points) out.points.push_back({c.x + (p.x - c.x) * factor, c.y + (p.y - c.y) * factor});
  return out;
}

Sample cutmix(const Sample& s, const Sample& donor, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  check_image(s.image);
  check_image(donor.image);
  if (s.image.shape() != donor.image.shape()) throw DimensionError("cutmix donor must match the image shape");
  const std::size_t iw = s.image.dim(1), ih = s.image.dim(0);
  if (x0 + w > iw || y0 + h > ih) throw DimensionError("cutmix box exceeds the frame");
  std::vector<double> img = s.image.to_vector();
  const auto dd = donor.image.data();
  for (std::size_t i = y0; i < y0 + h; ++i) {
    for (std::size_t j = x0; j < x0 + w; ++j) {
      for (std::size_t c = 0; c < 3; ++c) img[(i * iw + j) * 3 + c] = dd[(i * iw + j) * 3 + c];
    }
  }
  auto inside = [&](const Point& p) {
    return p.x >= static_cast<double>(x0) && p.x < static_cast<double>(x0 + w) && p.y >= static_cast<double>(y0) &&
           p.y < static_cast<double>(y0 + h);
  };
  Sample out;
  out.image = Tensor::from(s.image.shape(), std::move(img));
  for (const Point& p : s.points) {
    if (!inside(p)) out.points.push_back(p);
  }
  for (const Point& p : donor.points) {
    if (inside(p)) out.points.push_back(p);
  }
  return out;
}

Sample augment(const Sample& s, AugmentOp op, Rng& rng, const Sample* donor) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (op) {
    case AugmentOp::kRotate: return rotate(s, -15.0 + 30.0 * unit(rng));
    case AugmentOp::kHflip: return hflip(s);
    case AugmentOp::kVflip: return vflip(s);
    case AugmentOp::kContrast: return adjust_contrast(s, 0.7 + 0.6 * unit(rng));
    case AugmentOp::kBrightness: return adjust_brightness(s, -0.1 + 0.2 * unit(rng));
    case AugmentOp::kGaussNoise: return add_gauss_noise(s, 0.02, rng);
    case AugmentOp::kRescale: return rescale(s, 0.5 + unit(rng));
    case AugmentOp::kCutmix: {
      if (!donor) throw UsageError("cutmix requires a donor sample");
      check_image(s.image);
      const std::size_t iw = s.image.dim(1), ih = s.image.dim(0);
      const auto bw = std::max<std::size_t>(1, static_cast<std::size_t>((0.25 + 0.25 * unit(rng)) * iw));
      const auto bh = std::max<std::size_t>(1, static_cast<std::size_t>((0.25 + 0.25 * unit(rng)) * ih));
      const auto x0 = static_cast<std::size_t>(unit(rng) * static_cast<double>(iw - bw + 1));
      const auto y0 = static_cast<std::size_t>(unit(rng) * static_cast<double>(ih - bh + 1));
      return cutmix(s, *donor, std::min(x0, iw - bw), std::min(y0, ih - bh), bw, bh);
    }
  }
  throw ConfigError("unknown augmentation");
}

std::vector<Point> clip_to_frame(const std::vector<Point>& points, std::size_t width, std::size_t height) {
  std::vector<Point> out;
  for (const Point& p : points) {
    if (p.x >= 0.0 && p.x < static_cast<double>(width) && p.y >= 0.0 && p.y < static_cast<double>(height)) {
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace akt
