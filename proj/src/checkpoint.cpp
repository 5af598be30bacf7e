#include "sos/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace sos {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'O', 'S', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void raw(const void* p, std::size_t n) {
    auto* c = static_cast<const char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  void raw(void* p, std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError(CheckpointErrorKind::Truncated, "unexpected end of data");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::Io: return "checkpoint I/O error";
    case CheckpointErrorKind::BadMagic: return "not a checkpoint";
    case CheckpointErrorKind::UnsupportedVersion: return "unsupported checkpoint version";
    case CheckpointErrorKind::Truncated: return "truncated checkpoint";
    case CheckpointErrorKind::Mismatch: return "checkpoint does not match model";
  }
  return "checkpoint error";
}

Checkpoint snapshot(const SosModel& model) {
  Checkpoint ckpt;
  ckpt.feature_width = static_cast<std::uint32_t>(model.config.feature_width());
  ckpt.num_classes = static_cast<std::uint32_t>(model.config.num_classes);
  ckpt.num_patches = static_cast<std::uint32_t>(model.config.num_patches);
  for (const auto& named : model.named_parameters()) {
    CheckpointTensor t;
    t.name = named.name;
    for (auto extent : named.tensor.shape()) t.shape.push_back(static_cast<std::uint32_t>(extent));
    t.values.assign(named.tensor.data().begin(), named.tensor.data().end());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void restore(SosModel& model, const Checkpoint& ckpt) {
  auto mismatch = [](const std::string& what) { return CheckpointError(CheckpointErrorKind::Mismatch, what); };
  if (ckpt.feature_width != model.config.feature_width() || ckpt.num_classes != model.config.num_classes ||
      ckpt.num_patches != model.config.num_patches) {
    throw mismatch("header dimensions (d, n, P) differ from the model");
  }
  auto named = model.named_parameters();
  if (named.size() != ckpt.tensors.size()) throw mismatch("tensor count differs");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& src = ckpt.tensors[i];
    if (src.name != named[i].name) throw mismatch("expected tensor '" + named[i].name + "', found '" + src.name + "'");
    Shape shape(src.shape.begin(), src.shape.end());
    if (shape != named[i].tensor.shape()) throw mismatch("shape of '" + src.name + "' differs");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto dst = named[i].tensor.mutable_data();
    std::copy(ckpt.tensors[i].values.begin(), ckpt.tensors[i].values.end(), dst.begin());
  }
}

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(ckpt.version);
  w.u32(ckpt.feature_width);
  w.u32(ckpt.num_classes);
  w.u32(ckpt.num_patches);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto extent : t.shape) w.u32(extent);
    for (double v : t.values) w.f64(v);
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  Reader r(bytes);
  char magic[8];
  const std::size_t head = std::min(bytes.size(), sizeof magic);
  if (std::memcmp(bytes.data(), kMagic, head) != 0) throw CheckpointError(CheckpointErrorKind::BadMagic, "bad magic");
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError(CheckpointErrorKind::BadMagic, "bad magic");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::UnsupportedVersion, "version " + std::to_string(ckpt.version));
  }
  ckpt.feature_width = r.u32();
  ckpt.num_classes = r.u32();
  ckpt.num_patches = r.u32();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.u32();
    if (name_len > r.remaining()) throw CheckpointError(CheckpointErrorKind::Truncated, "tensor name");
    t.name.resize(name_len);
    r.raw(t.name.data(), name_len);
    const auto rank = r.u32();
    std::uint64_t elements = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.u32());
      elements *= t.shape.back();
    }
    if (elements * sizeof(double) > r.remaining()) {
      throw CheckpointError(CheckpointErrorKind::Truncated, "values of '" + t.name + "'");
    }
    t.values.resize(elements);
    for (auto& v : t.values) v = r.f64();
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError(CheckpointErrorKind::Mismatch, "trailing bytes after last tensor");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const SosModel& model) {
  auto bytes = encode_checkpoint(snapshot(model));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::Io, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_checkpoint(const std::filesystem::path& path, SosModel& model) { restore(model, read_checkpoint(path)); }

}  // namespace sos
