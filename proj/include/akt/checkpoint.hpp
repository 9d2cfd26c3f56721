#pragma once

// Little-endian binary checkpoint: "AKTC" magic, format version, config echo,
// training step, rng state and named float64 tensors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "akt/nn.hpp"
#include "akt/tensor.hpp"

namespace akt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<StoredTensor> tensors;
};

Checkpoint make_checkpoint(const ParamList& params, const std::string& config, std::uint64_t step,
                           const std::string& rng_state);

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws ParseError on a bad magic, unknown version or truncated payload.
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into the parameters with the same names. Throws
/// DimensionError on a missing name, an extra tensor or a shape mismatch.
void apply_checkpoint(const Checkpoint& ckpt, const ParamList& params);

}  // namespace akt
