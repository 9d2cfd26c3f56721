#pragma once

// Synthetic maize-plot generator: two-row plot geometry, jitter, emergence
// thinning and weeds, blob rendering, and the augmentation list.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "akt/nn.hpp"
#include "akt/points.hpp"
#include "akt/tensor.hpp"

namespace akt {

struct FieldConfig {
  std::size_t rows = 2;
  double row_spacing_m = 0.97;
  double interval_m = 0.15;
  std::size_t seeds_per_plot = 80;
  double emergence = 0.9;
  double jitter_m = 0.002 * 2.38;  // 2 px at the default gsd
  double weed_density = 0.0;       // expected weeds per square metre
  double gsd_mm = 2.38;
  std::size_t width = 256;
  std::size_t height = 256;
  std::uint64_t seed = 0;

  double interval_px() const { return interval_m * 1000.0 / gsd_mm; }
  double row_spacing_px() const { return row_spacing_m * 1000.0 / gsd_mm; }
  double jitter_px() const { return jitter_m * 1000.0 / gsd_mm; }
  std::size_t seeds_per_row() const { return rows == 0 ? 0 : seeds_per_plot / rows; }
  void validate() const;
};

struct Plant {
  Point center;
  double radius = 8.0;     // px
  double intensity = 1.0;  // blob peak opacity
  std::size_t row = 0;
  std::size_t slot = 0;  // seed position along the row
};

struct FieldScene {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Plant> plants;
  std::vector<Plant> weeds;
  std::uint64_t texture_seed = 0;
  double gsd_mm = 2.38;
  double row_spacing_px = 0.0;

  std::vector<Point> ground_truth() const;
  /// Consecutive emerged plants within each row, as ground-truth indices.
  std::vector<std::pair<std::size_t, std::size_t>> reference_pairs() const;
};

/// Plots wider than the image are cut to a window anchored on a random row;
/// smaller plots are placed whole at a random offset.
FieldScene generate_field(const FieldConfig& cfg);

/// [H x W x 3] image in [0, 1]: textured soil plus Gaussian blobs.
Tensor render(const FieldScene& scene);

enum class AugmentOp { kRotate, kHflip, kVflip, kContrast, kBrightness, kGaussNoise, kRescale, kCutmix };

AugmentOp parse_augment_op(const std::string& name);
std::string to_string(AugmentOp op);

struct Sample {
  Tensor image;  // [H x W x 3]
  std::vector<Point> points;
};

// Deterministic transforms; geometric ones map points with the image.
Sample rotate(const Sample& s, double degrees);
Sample hflip(const Sample& s);
Sample vflip(const Sample& s);
Sample adjust_contrast(const Sample& s, double factor);
Sample adjust_brightness(const Sample& s, double offset);
Sample add_gauss_noise(const Sample& s, double sigma, Rng& rng);
Sample rescale(const Sample& s, double factor);
/// Pastes the donor's [x0, x0+w) x [y0, y0+h) region, replacing the points
/// inside it with the donor's.
Sample cutmix(const Sample& s, const Sample& donor, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);

/// Applies `op` with parameters drawn from `rng`: rotation in [-15, 15]
/// degrees, contrast factor in [0.7, 1.3], brightness in [-0.1, 0.1], noise
/// sigma 0.02, scale in [0.5, 1.5], cutmix box sides in [1/4, 1/2] of the
/// frame. Throws UsageError for cutmix without a donor.
Sample augment(const Sample& s, AugmentOp op, Rng& rng, const Sample* donor = nullptr);

/// Drops points outside [0, W) x [0, H).
std::vector<Point> clip_to_frame(const std::vector<Point>& points, std::size_t width, std::size_t height);

}  // namespace akt
