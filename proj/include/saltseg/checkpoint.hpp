#pragma once

// Binary checkpoint format, little-endian throughout:
//
//   "SSEG"  u32 version  u64 spec_hash  u64 epochs_completed
//   config: u64 epochs, u64 batch_size, f64 lr_scale, f64 rho, f64 eps,
//           u64 seed, f64 train_fraction, u8 faithful_table1, u64 log_every,
//           u64 checkpoint_every, u8 reduction
//   u32 rng_len, rng_len bytes (textual mt19937_64 state)
//   u32 tensor_count, then per tensor:
//           u32 name_len, name, u32 rank, u64 dims[rank], u64 payload offset
//   u64 payload_bytes, payload (raw f64 values)
//   u32 CRC-32 over every preceding byte

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "saltseg/adadelta.hpp"
#include "saltseg/config.hpp"
#include "saltseg/error.hpp"
#include "saltseg/model.hpp"

namespace saltseg {

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'E', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t spec_hash = 0;
  std::uint64_t epochs_completed = 0;
  TrainConfig config;
  std::string rng_state;
  std::vector<ConvKernel> params;
  OptimizerState optimizer;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.spec_hash == b.spec_hash && a.epochs_completed == b.epochs_completed &&
           a.config == b.config && a.rng_state == b.rng_state && a.params == b.params &&
           a.optimizer.slots == b.optimizer.slots;
  }
};

inline ModelSpec checkpoint_spec(const Checkpoint& ckpt) {
  return canonical_spec(ckpt.config.faithful_table1);
}

/// Rebuilds the network stored in a checkpoint of the canonical architecture.
inline Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(checkpoint_spec(ckpt), ckpt.config.seed);
  if (model.hash() != ckpt.spec_hash)
    throw IncompatibleError("checkpoint was written for a different model spec");
  if (model.params().size() != ckpt.params.size())
    throw IncompatibleError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                            " kernels, model expects " + std::to_string(model.params().size()));
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    if (model.params()[i].weights.dims() != ckpt.params[i].weights.dims() ||
        model.params()[i].bias.dims() != ckpt.params[i].bias.dims())
      throw IncompatibleError("checkpoint kernel " + std::to_string(i) + " has the wrong shape");
  }
  model.params() = ckpt.params;
  return model;
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes, std::size_t limit)
      : bytes_(bytes), limit_(limit) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > limit_ - pos_) throw TruncatedError("checkpoint is truncated");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const noexcept { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::vector<std::string> tensor_names(std::size_t kernels) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < kernels; ++i) {
    const std::string base = "kernel" + std::to_string(i);
    for (const char* part : {".weight", ".bias"}) {
      names.push_back(base + part);
      names.push_back(base + part + std::string(".acc_grad_sq"));
      names.push_back(base + part + std::string(".acc_update_sq"));
    }
  }
  return names;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  if (ckpt.optimizer.slots.size() != 2 * ckpt.params.size())
    throw StateError("checkpoint optimizer state does not match its parameters");
  std::vector<detail::NamedTensor> tensors;
  const auto names = detail::tensor_names(ckpt.params.size());
  for (std::size_t i = 0, n = 0; i < ckpt.params.size(); ++i) {
    const Tensor* parts[] = {&ckpt.params[i].weights, &ckpt.params[i].bias};
    for (std::size_t p = 0; p < 2; ++p) {
      const auto& slot = ckpt.optimizer.slots[2 * i + p];
      tensors.push_back({names[n++], parts[p]});
      tensors.push_back({names[n++], &slot.acc_grad_sq});
      tensors.push_back({names[n++], &slot.acc_update_sq});
    }
  }

  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(ckpt.spec_hash);
  w.u64(ckpt.epochs_completed);
  const auto& c = ckpt.config;
  w.u64(c.epochs);
  w.u64(c.batch_size);
  w.f64(c.lr_scale);
  w.f64(c.rho);
  w.f64(c.eps);
  w.u64(c.seed);
  w.f64(c.train_fraction);
  w.u8(c.faithful_table1 ? 1 : 0);
  w.u64(c.log_every);
  w.u64(c.checkpoint_every);
  w.u8(static_cast<std::uint8_t>(c.reduction));
  w.str(ckpt.rng_state);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.tensor->rank()));
    for (auto d : t.tensor->dims()) w.u64(d);
    w.u64(offset);
    offset += t.tensor->size() * sizeof(double);
  }
  w.u64(offset);
  for (const auto& t : tensors)
    for (double v : t.tensor->values()) w.f64(v);
  const std::uint32_t crc = detail::crc32_of(w.bytes().data(), w.bytes().size());
  w.u32(crc);
  return std::move(w.bytes());
}

/// Parses checkpoint bytes. When `expected_hash` is given, a different spec
/// hash raises IncompatibleError.
inline Checkpoint deserialize(const std::vector<std::uint8_t>& bytes,
                              std::optional<std::uint64_t> expected_hash = std::nullopt) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw BadMagicError("not a checkpoint file (bad magic)");
  if (bytes.size() < 8) throw TruncatedError("checkpoint is truncated");
  detail::ByteReader r(bytes, bytes.size());
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw BadVersionError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.spec_hash = r.u64();
  ckpt.epochs_completed = r.u64();
  auto& c = ckpt.config;
  c.epochs = r.u64();
  c.batch_size = r.u64();
  c.lr_scale = r.f64();
  c.rho = r.f64();
  c.eps = r.f64();
  c.seed = r.u64();
  c.train_fraction = r.f64();
  c.faithful_table1 = r.u8() != 0;
  c.log_every = r.u64();
  c.checkpoint_every = r.u64();
  const std::uint8_t reduction = r.u8();
  if (reduction > 1) throw IntegrityError("checkpoint has an unknown reduction tag");
  c.reduction = static_cast<Reduction>(reduction);
  ckpt.rng_state = r.str();

  struct Entry {
    std::string name;
    Dims dims;
    std::uint64_t offset;
  };
  const std::uint32_t count = r.u32();
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IntegrityError("checkpoint tensor '" + e.name + "' has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) e.dims.push_back(r.u64());
    e.offset = r.u64();
    entries.push_back(std::move(e));
  }
  const std::uint64_t payload_bytes = r.u64();
  if (payload_bytes > bytes.size() || bytes.size() - r.pos() < payload_bytes + 4)
    throw TruncatedError("checkpoint is truncated");
  const std::size_t payload_start = r.pos();
  const std::size_t body_end = payload_start + payload_bytes;
  if (bytes.size() != body_end + 4) throw IntegrityError("checkpoint has trailing bytes");
  detail::ByteReader tail(bytes, bytes.size());
  tail.take(body_end);
  if (tail.u32() != detail::crc32_of(bytes.data(), body_end))
    throw IntegrityError("checkpoint CRC mismatch");

  if (expected_hash && *expected_hash != ckpt.spec_hash)
    throw IncompatibleError("checkpoint model spec hash does not match this model");

  if (count % 6 != 0) throw IntegrityError("checkpoint tensor directory is malformed");
  const auto names = detail::tensor_names(count / 6);
  std::vector<Tensor> tensors;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.name != names[i]) throw IntegrityError("unexpected checkpoint tensor '" + e.name + "'");
    const std::size_t n = dims_product(e.dims);
    if (e.offset % sizeof(double) != 0 || e.offset > payload_bytes ||
        (payload_bytes - e.offset) / sizeof(double) < n)
      throw IntegrityError("checkpoint tensor '" + e.name + "' lies outside the payload");
    detail::ByteReader pr(bytes, body_end);
    pr.take(payload_start + e.offset);
    std::vector<double> data(n);
    for (auto& v : data) v = pr.f64();
    tensors.emplace_back(e.dims, std::move(data));
  }
  ckpt.optimizer.config = c.optimizer();
  for (std::size_t i = 0; i < tensors.size(); i += 6) {
    ckpt.params.push_back({std::move(tensors[i]), std::move(tensors[i + 3])});
    ckpt.optimizer.slots.push_back({std::move(tensors[i + 1]), std::move(tensors[i + 2])});
    ckpt.optimizer.slots.push_back({std::move(tensors[i + 4]), std::move(tensors[i + 5])});
  }
  return ckpt;
}

/// Writes through a temporary file and a rename, so a failed write leaves
/// any previous checkpoint at `path` intact.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  std::optional<std::uint64_t> expected_hash = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize(bytes, expected_hash);
}

}  // namespace saltseg
