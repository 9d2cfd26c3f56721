#include "akt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "akt/error.hpp"

namespace akt {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'A', 'K', 'T', 'C'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw ParseError(source_ + ": truncated checkpoint at byte " + std::to_string(pos_));
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const ParamList& params, const std::string& config, std::uint64_t step,
                           const std::string& rng_state) {
  Checkpoint c;
  c.config = config;
  c.step = step;
  c.rng_state = rng_state;
  for (const auto& p : params) c.tensors.push_back({p.name, p.tensor.shape(), p.tensor.to_vector()});
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, ckpt.version);
  put_string(out, ckpt.config);
  put<std::uint64_t>(out, ckpt.step);
  put_string(out, ckpt.rng_state);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size()) throw DimensionError("stored tensor " + t.name + " has wrong size");
    put_string(out, t.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t e : t.shape) put<std::uint64_t>(out, e);
    for (double v : t.values) put<double>(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError(source + ": not a checkpoint (bad magic)");
  }
  const std::string body = bytes.substr(4);
  Reader r(body, source);
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw ParseError(source + ": unsupported checkpoint version " + std::to_string(c.version));
  }
  c.config = r.get_string();
  c.step = r.get<std::uint64_t>();
  c.rng_state = r.get_string();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t a = 0; a < rank; ++a) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    const std::size_t n = shape_numel(t.shape);
    r.need(static_cast<std::uint64_t>(n) * sizeof(double));
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) t.values[k] = r.get<double>();
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw ParseError(source + ": trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

void apply_checkpoint(const Checkpoint& ckpt, const ParamList& params) {
  std::unordered_map<std::string, const StoredTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  if (by_name.size() != params.size() || ckpt.tensors.size() != params.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                         std::to_string(params.size()));
  }
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DimensionError("checkpoint is missing tensor " + p.name);
    if (it->second->shape != p.tensor.shape()) {
      throw DimensionError("checkpoint tensor " + p.name + " has shape " + shape_str(it->second->shape) +
                           ", model expects " + shape_str(p.tensor.shape()));
    }
  }
  for (const auto& p : params) {
    const auto& values = by_name.at(p.name)->values;
    Tensor t = p.tensor;
    auto dst = t.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

}  // namespace akt
