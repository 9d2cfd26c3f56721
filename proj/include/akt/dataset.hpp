#pragma once

// On-disk dataset: binary PPM images, plain-text point annotations, spacing
// sidecars and per-split manifests.

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "akt/points.hpp"
#include "akt/synthfield.hpp"
#include "akt/tensor.hpp"

namespace akt {

/// Writes an [H x W x 3] image in [0, 1] as 8-bit binary PPM (P6).
void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// Reads P6 (RGB) or P5 (grey, replicated to RGB) with maxval 255.
Tensor read_ppm(const std::filesystem::path& path);

/// First line is the count, then one "x y" pair per line.
std::string format_annotation(const std::vector<Point>& points);
std::vector<Point> parse_annotation(const std::string& text, const std::string& source = "annotation");
void write_annotation(const std::filesystem::path& path, const std::vector<Point>& points);
std::vector<Point> read_annotation(const std::filesystem::path& path);

/// Reference spacing sidecar: gsd, nominal row spacing and the ground-truth
/// index pairs of consecutive plants with their distance in cm.
struct SpacingMeta {
  double gsd_mm = 2.38;
  double row_spacing_px = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> distances_cm;
};

SpacingMeta spacing_meta(const FieldScene& scene);
void write_meta(const std::filesystem::path& path, const SpacingMeta& meta);
SpacingMeta read_meta(const std::filesystem::path& path);

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split parse_split(const std::string& name);

/// Sequential 60/15/25 partition of n items: {train, val, test} counts.
struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};
SplitCounts split_counts(std::size_t n);

/// Generates `scenes` scenes with per-scene seeds derived from cfg.seed and
/// writes scene_NNNNN.{ppm,txt,meta} plus train.txt, val.txt, test.txt.
SplitCounts write_dataset(const std::filesystem::path& dir, const FieldConfig& cfg, std::size_t scenes);

struct DatasetItem {
  std::string name;
  Tensor image;
  std::vector<Point> points;
  bool has_meta = false;
  SpacingMeta meta;
};

/// Image names listed in the split manifest.
std::vector<std::string> read_manifest(const std::filesystem::path& dir, Split split);
DatasetItem load_item(const std::filesystem::path& dir, const std::string& image_name);
std::vector<DatasetItem> load_split(const std::filesystem::path& dir, Split split);

}  // namespace akt
