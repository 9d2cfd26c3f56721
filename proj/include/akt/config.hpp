#pragma once

// Run configuration: defaults, flat "section.key = value" files, and the
// canonical text echo stored in checkpoints.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "akt/metrics.hpp"
#include "akt/model.hpp"
#include "akt/optim.hpp"
#include "akt/synthfield.hpp"

namespace akt {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t steps = 500;
  std::size_t epochs = 0;  // when positive, replaces `steps` with whole passes
  std::size_t checkpoint_every = 100;
  std::vector<AugmentOp> augment;
};

struct RunConfig {
  ModelConfig model;
  FieldConfig field;
  MetricConfig metric;
  AdamConfig optim;
  TrainConfig train;
  std::size_t scenes = 100;
  std::string data_dir = "data";
  std::string out_dir = "runs";
  std::uint64_t seed = 0;

  /// Sets one "section.key" entry; throws ConfigError for unknown keys or
  /// malformed values.
  void set(const std::string& key, const std::string& value);
  /// Applies every "section.key = value" line; '#' starts a comment.
  void apply_text(const std::string& text, const std::string& source = "config");
  void apply_file(const std::filesystem::path& path);
  /// Every key in a fixed order, one "key = value" per line.
  std::string to_text() const;
  /// Propagates the run seed to the model and field seeds and validates.
  void finalize();
};

std::vector<std::string> config_keys();

}  // namespace akt
