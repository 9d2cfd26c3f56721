#include "akt/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "akt/error.hpp"

namespace akt {

namespace {

struct Entry {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

template <typename T>
T to_unsigned(const std::string& key, const std::string& v) {
  T out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Entry size_entry(const std::string& key, std::size_t& field) {
  return {key, [&field] { return std::to_string(field); },
          [&field, key](const std::string& v) { field = to_unsigned<std::size_t>(key, v); }};
}

Entry double_entry(const std::string& key, double& field) {
  return {key, [&field] { return fmt_double(field); },
          [&field, key](const std::string& v) { field = to_double(key, v); }};
}

Entry bool_entry(const std::string& key, bool& field) {
  return {key, [&field] { return field ? std::string("true") : std::string("false"); },
          [&field, key](const std::string& v) { field = to_bool(key, v); }};
}

std::vector<Entry> entries(RunConfig& c) {
  ModelConfig& m = c.model;
  FieldConfig& f = c.field;
  std::vector<Entry> e = {
      size_entry("model.height", m.height),
      size_entry("model.width", m.width),
      size_entry("model.backbone_channels", m.backbone_channels),
      size_entry("model.embed", m.embed),
      size_entry("model.encoder_layers", m.encoder_layers),
      size_entry("model.decoder_layers", m.decoder_layers),
      size_entry("model.queries", m.queries),
      size_entry("model.kan_hidden", m.kan_hidden),
      size_entry("model.heads", m.heads),
      size_entry("model.pkan_groups", m.pkan_groups),
      bool_entry("model.keep_spline", m.keep_spline),
      {"model.gate_order", [&m] { return to_string(m.gate_order); },
       [&m](const std::string& v) { m.gate_order = parse_gate_order(v); }},
      {"model.feed_forward", [&m] { return to_string(m.feed_forward); },
       [&m](const std::string& v) { m.feed_forward = parse_feed_forward_kind(v); }},
      {"model.encoder_attention", [&m] { return to_string(m.encoder_attention); },
       [&m](const std::string& v) { m.encoder_attention = parse_attention_kind(v); }},
      bool_entry("model.query_sampling", m.query_sampling),
      double_entry("model.branch_scale", m.branch_scale),
      size_entry("field.rows", f.rows),
      double_entry("field.row_spacing_m", f.row_spacing_m),
      double_entry("field.interval_m", f.interval_m),
      size_entry("field.seeds_per_plot", f.seeds_per_plot),
      double_entry("field.emergence", f.emergence),
      double_entry("field.jitter_m", f.jitter_m),
      double_entry("field.weed_density", f.weed_density),
      double_entry("field.gsd_mm", f.gsd_mm),
      size_entry("field.width", f.width),
      size_entry("field.height", f.height),
      {"metric.thresholds",
       [&c] {
         std::string s;
         for (double t : c.metric.thresholds) s += (s.empty() ? "" : ",") + fmt_double(t);
         return s;
       },
       [&c](const std::string& v) {
         c.metric.thresholds.clear();
         for (const std::string& t : split_list(v)) c.metric.thresholds.push_back(to_double("metric.thresholds", t));
       }},
      double_entry("metric.gsd_mm", c.metric.gsd_mm),
      double_entry("metric.conf_cutoff", c.metric.conf_cutoff),
      double_entry("optim.lr", c.optim.lr),
      double_entry("optim.beta1", c.optim.beta1),
      double_entry("optim.beta2", c.optim.beta2),
      double_entry("optim.eps", c.optim.eps),
      double_entry("optim.weight_decay", c.optim.weight_decay),
      double_entry("optim.clip_norm", c.optim.clip_norm),
      size_entry("train.batch_size", c.train.batch_size),
      size_entry("train.steps", c.train.steps),
      size_entry("train.epochs", c.train.epochs),
      size_entry("train.checkpoint_every", c.train.checkpoint_every),
      {"train.augment",
       [&c] {
         std::string s;
         for (AugmentOp op : c.train.augment) s += (s.empty() ? "" : ",") + to_string(op);
         return s;
       },
       [&c](const std::string& v) {
         c.train.augment.clear();
         for (const std::string& t : split_list(v)) c.train.augment.push_back(parse_augment_op(t));
       }},
      size_entry("data.scenes", c.scenes),
      {"data.dir", [&c] { return c.data_dir; }, [&c](const std::string& v) { c.data_dir = v; }},
      {"run.out", [&c] { return c.out_dir; }, [&c](const std::string& v) { c.out_dir = v; }},
      {"run.seed", [&c] { return std::to_string(c.seed); },
       [&c](const std::string& v) { c.seed = to_unsigned<std::uint64_t>("run.seed", v); }},
  };
  return e;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (Entry& e : entries(*this)) {
    if (e.key == key) {
      e.set(trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_text(const std::string& text, const std::string& source) {
  std::istringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'section.key = value'");
    }
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& err) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + err.what());
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str(), path.string());
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::string out;
  for (const Entry& e : entries(copy)) out += e.key + " = " + e.get() + "\n";
  return out;
}

void RunConfig::finalize() {
  model.seed = seed;
  field.seed = seed;
  model.validate();
  field.validate();
  metric.validate();
  optim.validate();
  if (train.batch_size == 0) throw ConfigError("batch size must be positive");
}

std::vector<std::string> config_keys() {
  RunConfig c;
  std::vector<std::string> out;
  for (const Entry& e : entries(c)) out.push_back(e.key);
  return out;
}

}  // namespace akt
