#include "lava/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lava {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void doubles(std::span<const double> v) { raw(v.data(), v.size() * sizeof(double)); }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

Checkpoint make_checkpoint(ModelKind kind, const ModelConfig& cfg, const ParamStore& store,
                           const Vocabulary& vocab) {
  Checkpoint c;
  c.kind = kind;
  c.config = cfg;
  c.tensors = store.snapshot();
  c.vocab = vocab;
  return c;
}

void install(ParamStore& store, const NamedTensors& tensors) {
  for (const auto& [name, _] : tensors) {
    if (!store.contains(name)) throw CheckpointError("unexpected tensor in checkpoint: " + name);
  }
  for (const auto& name : store.names()) {
    if (!tensors.contains(name)) throw CheckpointError("missing tensor: " + name);
  }
  try {
    store.assign(tensors);
  } catch (const std::exception& e) {
    throw CheckpointError(e.what());
  }
}

Checkpoint read_kind(const std::string& path, ModelKind want) {
  Checkpoint c = read_checkpoint(path);
  if (c.kind != want) {
    throw CheckpointError(path + " holds a " +
                          (c.kind == ModelKind::kNat ? "NAT model" : "teacher") +
                          ", expected a " + (want == ModelKind::kNat ? "NAT model" : "teacher"));
  }
  return c;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Writer w;
  w.raw("LAVA", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.kind));
  const auto kv = ckpt.config.to_kv();
  w.u32(static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t e : t.shape()) w.u64(e);
    w.doubles(t.data());
  }
  const auto tokens = ckpt.vocab.ordinary_tokens();
  w.u32(static_cast<std::uint32_t>(tokens.size()));
  for (const auto& t : tokens) w.str(t);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw CheckpointError("write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "LAVA", 4) != 0) throw CheckpointError(path + ": bad magic, not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw CheckpointError(path + ": unknown model kind " + std::to_string(kind));
  c.kind = static_cast<ModelKind>(kind);
  std::map<std::string, std::string> kv;
  for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) {
    std::string k = r.str();
    kv[k] = r.str();
  }
  try {
    c.config = ModelConfig::from_kv(kv);
  } catch (const ConfigError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
  for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) {
    std::string name = r.str();
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw CheckpointError(path + ": tensor " + name + " has implausible rank");
    Shape shape(ndim);
    std::uint64_t numel = 1;
    for (auto& e : shape) {
      e = r.u64();
      numel *= e;
    }
    if (numel > (1ULL << 32)) throw CheckpointError(path + ": tensor " + name + " is too large");
    std::vector<double> data(numel);
    r.raw(data.data(), numel * sizeof(double));
    if (!c.tensors.emplace(name, Tensor::from(shape, std::move(data))).second) {
      throw CheckpointError(path + ": duplicate tensor " + name);
    }
  }
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) tokens.push_back(r.str());
  if (!r.at_end()) throw CheckpointError(path + ": trailing bytes after vocabulary");
  c.vocab = Vocabulary(std::move(tokens));
  return c;
}

void save_checkpoint(const NatModel& model, const Vocabulary& vocab, const std::string& path) {
  write_checkpoint(path, make_checkpoint(ModelKind::kNat, model.config(), model.params(), vocab));
}

void save_checkpoint(const Teacher& teacher, const Vocabulary& vocab, const std::string& path) {
  write_checkpoint(path,
                   make_checkpoint(ModelKind::kTeacher, teacher.config(), teacher.params(), vocab));
}

NatModel load_nat(const std::string& path, Vocabulary* vocab_out) {
  Checkpoint c = read_kind(path, ModelKind::kNat);
  NatModel model(c.config);
  install(model.params(), c.tensors);
  if (vocab_out) *vocab_out = std::move(c.vocab);
  return model;
}

Teacher load_teacher(const std::string& path, Vocabulary* vocab_out) {
  Checkpoint c = read_kind(path, ModelKind::kTeacher);
  Teacher teacher(c.config);
  install(teacher.params(), c.tensors);
  if (vocab_out) *vocab_out = std::move(c.vocab);
  return teacher;
}

}  // namespace lava
