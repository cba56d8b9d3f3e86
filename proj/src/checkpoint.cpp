// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fusetrack/config.hpp"

namespace fusetrack {

namespace {

constexpr char kMagic[8] = {'F', 'T', 'R', 'K', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void str64(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void doubles(std::span<const double> v) { bytes(v.data(), v.size() * sizeof(double)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw VersionError("checkpoint truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str(std::uint64_t n) {
    if (n > in_.size() - pos_) throw VersionError("checkpoint truncated");
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(std::uint64_t n) {
    if (n > (in_.size() - pos_) / sizeof(double)) throw VersionError("checkpoint truncated");
    std::vector<double> v(n);
    bytes(v.data(), n * sizeof(double));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const TrackerModel& model, const AdamW* optimizer) {
  Checkpoint c;
  c.config = model.config();
  c.tensors = model.state();
  if (optimizer != nullptr) {
    c.step = optimizer->step_count();
    c.first_moments = optimizer->first_moments();
    c.second_moments = optimizer->second_moments();
  }
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.first_moments.size() != ckpt.second_moments.size())
    throw ContractError("checkpoint: moment lists differ in length");
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str64(model_config_to_text(ckpt.config));
  w.str64(ckpt.run_config);
  w.u64(ckpt.step);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str32(name);
    w.u32(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) w.u64(d);
    w.doubles(t.data());
  }
  w.u32(static_cast<std::uint32_t>(ckpt.first_moments.size()));
  for (std::size_t i = 0; i < ckpt.first_moments.size(); ++i) {
    if (ckpt.first_moments[i].size() != ckpt.second_moments[i].size())
      throw ContractError("checkpoint: moment pair sizes differ");
    w.u64(ckpt.first_moments[i].size());
    w.doubles(ckpt.first_moments[i]);
    w.doubles(ckpt.second_moments[i]);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw VersionError("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  Checkpoint c;
  try {
    c.config = parse_model_config(r.str(r.u64()));
  } catch (const ConfigError& e) {
    throw VersionError(std::string("checkpoint header: ") + e.what());
  }
  c.run_config = r.str(r.u64());
  c.step = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    Shape shape(r.u32());
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      n *= d;
    }
    c.tensors.emplace_back(std::move(name), Tensor::from(shape, r.doubles(n)));
  }
  const auto moments = r.u32();
  for (std::uint32_t i = 0; i < moments; ++i) {
    const auto n = r.u64();
    c.first_moments.push_back(r.doubles(n));
    c.second_moments.push_back(r.doubles(n));
  }
  if (!r.done()) throw VersionError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

TrackerModel model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = TrackerModel::create(ckpt.config, 0);
  apply_state(model, ckpt);
  return model;
}

void apply_state(TrackerModel& model, const Checkpoint& ckpt) {
  if (model_config_to_text(model.config()) != model_config_to_text(ckpt.config))
    throw VersionError("checkpoint model config does not match the model");
  auto state = model.state();
  if (state.size() != ckpt.tensors.size())
    throw VersionError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                       std::to_string(state.size()));
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto& [name, dst] = state[i];
    const auto& [src_name, src] = ckpt.tensors[i];
    if (name != src_name) throw VersionError("checkpoint tensor '" + src_name + "' where '" + name + "' expected");
    if (dst.shape() != src.shape()) throw VersionError("checkpoint tensor '" + name + "' has the wrong shape");
    const auto from = src.data();
    auto to = dst.mutable_data();
    std::copy(from.begin(), from.end(), to.begin());
  }
}

void apply_optimizer_state(AdamW& optimizer, const Checkpoint& ckpt) {
  auto& m = optimizer.first_moments();
  auto& v = optimizer.second_moments();
  if (ckpt.first_moments.size() != m.size())
    throw VersionError("checkpoint optimizer state does not match the parameter count");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (ckpt.first_moments[i].size() != m[i].size())
      throw VersionError("checkpoint optimizer moment " + std::to_string(i) + " has the wrong length");
  }
  m = ckpt.first_moments;
  v = ckpt.second_moments;
  optimizer.set_step_count(ckpt.step);
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : serialize_checkpoint(ckpt)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fusetrack
