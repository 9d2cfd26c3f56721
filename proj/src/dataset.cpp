#include "akt/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "akt/error.hpp"
#include "akt/metrics.hpp"
#include "akt/nn.hpp"

namespace akt {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& tok, const std::string& where) {
  double v = 0.0;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) throw ParseError(where + ": bad number '" + tok + "'");
  return v;
}

std::size_t parse_count(const std::string& tok, const std::string& where) {
  std::size_t v = 0;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(where + ": bad integer '" + tok + "'");
  return v;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

/// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(const std::string& data, std::size_t& pos) {
  for (;;) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
  return data.substr(start, pos - start);
}

}  // namespace

void write_ppm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("write_ppm expects [H x W x 3], got " + shape_str(image.shape()));
  }
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  const auto d = image.data();
  const std::size_t header = out.size();
  out.resize(header + d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double v = std::clamp(d[i], 0.0, 1.0);
    out[header + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  write_text(path, out);
}

Tensor read_ppm(const fs::path& path) {
  const std::string data = read_text(path);
  std::size_t pos = 0;
  const std::string magic = ppm_token(data, pos);
  if (magic != "P6" && magic != "P5") throw ParseError(path.string() + ": not a binary PPM/PGM file");
  const std::size_t w = parse_count(ppm_token(data, pos), path.string());
  const std::size_t h = parse_count(ppm_token(data, pos), path.string());
  const std::size_t maxval = parse_count(ppm_token(data, pos), path.string());
  if (maxval != 255) throw ParseError(path.string() + ": only maxval 255 is supported");
  ++pos;  // single whitespace before the raster
  const std::size_t channels = magic == "P6" ? 3 : 1;
  if (data.size() < pos + w * h * channels) throw ParseError(path.string() + ": truncated raster");
  std::vector<double> v(w * h * 3);
  for (std::size_t i = 0; i < w * h; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto byte = static_cast<unsigned char>(data[pos + i * channels + (channels == 3 ? c : 0)]);
      v[i * 3 + c] = static_cast<double>(byte) / 255.0;
    }
  }
  return Tensor::from({h, w, 3}, std::move(v));
}

std::string format_annotation(const std::vector<Point>& points) {
  std::string out = std::to_string(points.size()) + "\n";
  for (const Point& p : points) out += fmt(p.x) + " " + fmt(p.y) + "\n";
  return out;
}

std::vector<Point> parse_annotation(const std::string& text, const std::string& source) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError(source + ":1: missing point count");
  const auto head = split_ws(lines[0]);
  if (head.size() != 1) throw ParseError(source + ":1: expected a single point count");
  const std::size_t n = parse_count(head[0], source + ":1");
  std::vector<Point> points;
  points.reserve(n);
  std::size_t lineno = 1;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    lineno = i + 1;
    const auto toks = split_ws(lines[i]);
    if (toks.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (toks.size() != 2) throw ParseError(where + ": expected \"x y\"");
    points.push_back({parse_double(toks[0], where), parse_double(toks[1], where)});
  }
  if (points.size() != n) {
    throw ParseError(source + ": header declares " + std::to_string(n) + " points, found " +
                     std::to_string(points.size()));
  }
  return points;
}

void write_annotation(const fs::path& path, const std::vector<Point>& points) {
  write_text(path, format_annotation(points));
}

std::vector<Point> read_annotation(const fs::path& path) { return parse_annotation(read_text(path), path.string()); }

SpacingMeta spacing_meta(const FieldScene& scene) {
  SpacingMeta meta;
  meta.gsd_mm = scene.gsd_mm;
  meta.row_spacing_px = scene.row_spacing_px;
  meta.pairs = scene.reference_pairs();
  for (const auto& [a, b] : meta.pairs) {
    const Point& p = scene.plants[a].center;
    const Point& q = scene.plants[b].center;
    meta.distances_cm.push_back(px_to_cm(std::hypot(q.x - p.x, q.y - p.y), scene.gsd_mm));
  }
  return meta;
}

void write_meta(const fs::path& path, const SpacingMeta& meta) {
  std::string out = "gsd_mm " + fmt(meta.gsd_mm) + "\nrow_spacing_px " + fmt(meta.row_spacing_px) + "\n";
  for (std::size_t i = 0; i < meta.pairs.size(); ++i) {
    out += "pair " + std::to_string(meta.pairs[i].first) + " " + std::to_string(meta.pairs[i].second) + " " +
           fmt(meta.distances_cm[i]) + "\n";
  }
  write_text(path, out);
}

SpacingMeta read_meta(const fs::path& path) {
  SpacingMeta meta;
  const auto lines = lines_of(read_text(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto toks = split_ws(lines[i]);
    if (toks.empty()) continue;
    if (toks[0] == "gsd_mm" && toks.size() == 2) {
      meta.gsd_mm = parse_double(toks[1], where);
    } else if (toks[0] == "row_spacing_px" && toks.size() == 2) {
      meta.row_spacing_px = parse_double(toks[1], where);
    } else if (toks[0] == "pair" && toks.size() == 4) {
      meta.pairs.emplace_back(parse_count(toks[1], where), parse_count(toks[2], where));
      meta.distances_cm.push_back(parse_double(toks[3], where));
    } else {
      throw ParseError(where + ": unrecognised line");
    }
  }
  return meta;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.train = n * 60 / 100;
  c.val = n * 15 / 100;
  c.test = n - c.train - c.val;
  return c;
}

SplitCounts write_dataset(const fs::path& dir, const FieldConfig& cfg, std::size_t scenes) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const SplitCounts counts = split_counts(scenes);
  std::string manifests[3];
  for (std::size_t i = 0; i < scenes; ++i) {
    FieldConfig scene_cfg = cfg;
    scene_cfg.seed = derive_seed(cfg.seed, 1000 + i);
    const FieldScene scene = generate_field(scene_cfg);
    char stem[32];
    std::snprintf(stem, sizeof stem, "scene_%05zu", i);
    write_ppm(dir / (std::string(stem) + ".ppm"), render(scene));
    write_annotation(dir / (std::string(stem) + ".txt"), scene.ground_truth());
    write_meta(dir / (std::string(stem) + ".meta"), spacing_meta(scene));
    const std::size_t which = i < counts.train ? 0 : (i < counts.train + counts.val ? 1 : 2);
    manifests[which] += std::string(stem) + ".ppm\n";
  }
  write_text(dir / "train.txt", manifests[0]);
  write_text(dir / "val.txt", manifests[1]);
  write_text(dir / "test.txt", manifests[2]);
  return counts;
}

std::vector<std::string> read_manifest(const fs::path& dir, Split split) {
  const fs::path path = dir / (to_string(split) + ".txt");
  std::vector<std::string> out;
  for (const std::string& line : lines_of(read_text(path))) {
    const auto toks = split_ws(line);
    if (!toks.empty()) out.push_back(toks[0]);
  }
  return out;
}

DatasetItem load_item(const fs::path& dir, const std::string& image_name) {
  DatasetItem item;
  item.name = image_name;
  const fs::path image_path = dir / image_name;
  item.image = read_ppm(image_path);
  fs::path ann = image_path;
  ann.replace_extension(".txt");
  item.points = read_annotation(ann);
  fs::path meta = image_path;
  meta.replace_extension(".meta");
  if (fs::exists(meta)) {
    item.meta = read_meta(meta);
    item.has_meta = true;
  }
  return item;
}

std::vector<DatasetItem> load_split(const fs::path& dir, Split split) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  std::vector<DatasetItem> items;
  for (const std::string& name : read_manifest(dir, split)) items.push_back(load_item(dir, name));
  return items;
}

}  // namespace akt
