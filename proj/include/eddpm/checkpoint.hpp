#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "nets.hpp"
#include "rng.hpp"
#include "schedule.hpp"

namespace eddpm {

inline constexpr std::string_view kCheckpointMagic = "EDDPM1\n";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Full training state: config, schedule, parameters, Adam moments, the global
/// step counter and the noise RNG.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  TrainingConfig config;
  NoiseSchedule schedule;
  ModelState state;
  std::uint64_t step = 0;
  std::string rng_state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Header summary readable without touching parameter payloads.
struct CheckpointInfo {
  std::uint32_t version = 0;
  TrainingConfig config;
  std::size_t steps = 0;
  double beta0 = 0.0;
  SigmaMode sigma_mode = SigmaMode::PosteriorVariance;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Shape>> tensors;
  std::size_t parameter_count = 0;
  bool has_classifier = false;
};

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void f64s(const std::vector<double>& v) {
    if (!v.empty()) raw(v.data(), v.size() * 8);
  }
  void bytes(std::string_view s) { buf_.append(s); }
  std::string& buffer() { return buf_; }

 private:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return load<std::uint32_t>(); }
  std::uint64_t u64() { return load<std::uint64_t>(); }
  double f64() { return load<double>(); }
  std::string str() {
    const auto n = u64();
    return std::string(take(n));
  }
  std::vector<double> f64s(std::size_t n) {
    if (n > remaining() / 8) throw FormatError("checkpoint: truncated payload");
    std::vector<double> out(n);
    if (n) std::memcpy(out.data(), take(n * 8).data(), n * 8);
    return out;
  }
  void skip(std::size_t n) { (void)take(n); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  template <typename T>
  T load() {
    T v;
    std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
    return v;
  }
  std::string_view take(std::size_t n) {
    if (n > remaining()) throw FormatError("checkpoint: truncated file");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline void check_magic(ByteReader& r) {
  for (char c : kCheckpointMagic)
    if (r.remaining() == 0 || static_cast<char>(r.u8()) != c) throw FormatError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
}

/// Verifies the trailing checksum and returns the body without it.
inline std::string_view checked_body(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 4 + 8) throw FormatError("checkpoint: truncated file");
  const auto body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (fnv1a64(body) != stored) throw FormatError("checkpoint: checksum mismatch (corrupt or truncated file)");
  return body;
}

struct ScheduleHeader {
  std::vector<double> betas;
  double beta0;
  SigmaMode sigma_mode;
};

inline ScheduleHeader read_schedule(ByteReader& r) {
  ScheduleHeader h;
  const auto steps = r.u64();
  h.betas = r.f64s(steps);
  h.beta0 = r.f64();
  const auto mode = r.u8();
  if (mode > 1) throw FormatError("checkpoint: bad sigma mode");
  h.sigma_mode = mode == 1 ? SigmaMode::Beta : SigmaMode::PosteriorVariance;
  return h;
}

inline Shape read_shape(ByteReader& r) {
  const auto rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad tensor rank");
  Shape s(rank);
  for (auto& d : s) {
    d = r.u64();
    if (d == 0) throw FormatError("checkpoint: zero tensor dimension");
  }
  return s;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const auto& st = ck.state;
  if (st.optimizer.m.size() != st.params.size()) throw StateError("checkpoint: optimizer slots do not match parameters");
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(ck.version);
  w.str(config_to_text(ck.config));
  w.u64(ck.schedule.steps());
  w.f64s(ck.schedule.betas());
  w.f64(ck.schedule.beta0());
  w.u8(ck.schedule.sigma_mode() == SigmaMode::Beta ? 1 : 0);
  w.u64(ck.step);
  w.str(ck.rng_state);
  w.f64(st.optimizer.beta1);
  w.f64(st.optimizer.beta2);
  w.f64(st.optimizer.eps);
  w.u64(st.params.size());
  for (std::size_t i = 0; i < st.params.size(); ++i) {
    const auto& p = st.params[i];
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.shape.size()));
    for (auto d : p.tensor.shape) w.u64(d);
    w.f64s(p.tensor.data);
    w.f64s(st.optimizer.m[i]);
    w.f64s(st.optimizer.v[i]);
    w.u64(st.optimizer.steps[i]);
  }
  w.u8(st.classifier ? 1 : 0);
  if (st.classifier) {
    w.u64(st.classifier->w.size());
    w.f64s(st.classifier->w);
    w.f64(st.classifier->bias);
    w.f64(st.classifier->scale);
  }
  const auto sum = fnv1a64(w.buffer());
  w.u64(sum);
  return std::move(w.buffer());
}

/// Raises ShapeError unless `st` has exactly the parameters `arch` produces.
inline void check_compatible(const ModelState& st, const ArchConfig& arch) {
  const ModelState ref = init_params(arch, 0);
  if (ref.params.size() != st.params.size())
    throw ShapeError("checkpoint has " + std::to_string(st.params.size()) + " parameter tensors, config expects " +
                     std::to_string(ref.params.size()));
  for (std::size_t i = 0; i < ref.params.size(); ++i) {
    const auto& a = ref.params[i];
    const auto& b = st.params[i];
    if (a.name != b.name) throw ShapeError("checkpoint parameter #" + std::to_string(i) + " is '" + b.name +
                                           "', config expects '" + a.name + "'");
    if (a.tensor.shape != b.tensor.shape)
      throw ShapeError("checkpoint parameter '" + b.name + "' has shape " + shape_str(b.tensor.shape) +
                       ", config expects " + shape_str(a.tensor.shape));
  }
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  const auto body = detail::checked_body(bytes);
  detail::ByteReader r(body);
  detail::check_magic(r);
  Checkpoint ck;
  ck.config = parse_config_text(r.str());
  auto sh = detail::read_schedule(r);
  ck.schedule = NoiseSchedule(std::move(sh.betas), sh.beta0, sh.sigma_mode);
  ck.step = r.u64();
  ck.rng_state = r.str();
  ModelState& st = ck.state;
  st.arch = ck.config.arch();
  st.optimizer.beta1 = r.f64();
  st.optimizer.beta2 = r.f64();
  st.optimizer.eps = r.f64();
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.str();
    auto shape = detail::read_shape(r);
    const auto n = numel(shape);
    st.add(std::move(name), Tensor(shape, r.f64s(n), true));
    st.optimizer.m.push_back(r.f64s(n));
    st.optimizer.v.push_back(r.f64s(n));
    st.optimizer.steps.push_back(r.u64());
  }
  const auto has_cls = r.u8();
  if (has_cls > 1) throw FormatError("checkpoint: bad classifier flag");
  if (has_cls) {
    LinearClassifier c;
    c.w = r.f64s(r.u64());
    c.bias = r.f64();
    c.scale = r.f64();
    st.classifier = std::move(c);
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after payload");
  check_compatible(st, st.arch);
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  detail::write_file_bytes(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return deserialize_checkpoint(detail::read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Loads and checks the parameters against an expected architecture.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  check_compatible(ck.state, expected);
  return ck;
}

/// Reads the header and tensor directory, seeking past payloads. The checksum
/// is not verified.
inline CheckpointInfo inspect_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::ByteReader r(bytes);
  detail::check_magic(r);
  CheckpointInfo info;
  info.version = kCheckpointVersion;
  info.config = parse_config_text(r.str());
  const auto sh = detail::read_schedule(r);
  info.steps = sh.betas.size();
  info.beta0 = sh.beta0;
  info.sigma_mode = sh.sigma_mode;
  info.step = r.u64();
  (void)r.str();
  r.skip(24);
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.str();
    auto shape = detail::read_shape(r);
    const auto n = numel(shape);
    r.skip(n * 8 * 3 + 8);
    info.parameter_count += n;
    info.tensors.emplace_back(std::move(name), std::move(shape));
  }
  info.has_classifier = r.u8() == 1;
  return info;
}

}  // namespace eddpm
