#include "seq2align/checkpoint.hpp"

#include "seq2align/rng.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace seq2align {

namespace {

constexpr char kMagic[8] = {'S', '2', 'A', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string& bytes() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw std::runtime_error("checkpoint: truncated data");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::pair<const char*, std::size_t ModelShape::*> const kShapeKeys[] = {
    {"source_vocab", &ModelShape::source_vocab},   {"target_vocab", &ModelShape::target_vocab},
    {"embed", &ModelShape::embed},                 {"encoder_hidden", &ModelShape::encoder_hidden},
    {"decoder_hidden", &ModelShape::decoder_hidden}, {"attention", &ModelShape::attention},
    {"readout", &ModelShape::readout},
};

}  // namespace

std::string serialize_checkpoint(const ModelParameters& model, std::uint64_t source_vocab_hash,
                                 std::uint64_t target_vocab_hash) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(Checkpoint::version);
  w.u32(static_cast<std::uint32_t>(std::size(kShapeKeys)));
  for (const auto& [key, member] : kShapeKeys) {
    w.str(key);
    w.u64(model.shape().*member);
  }
  w.u64(source_vocab_hash);
  w.u64(target_vocab_hash);
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) w.u64(d);
    for (double v : p->value.values()) w.f64(v);
  }
  w.u64(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 12 || bytes.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const std::size_t body = bytes.size() - 8;
  const std::string tail_bytes = bytes.substr(body);
  Reader tail(tail_bytes, 8);
  if (tail.u64() != fnv1a64(std::string_view(bytes).substr(0, body)))
    throw std::runtime_error("checkpoint: checksum mismatch");

  Reader rr(bytes, body);
  rr.u64();  // magic, compared above
  const auto version = rr.u32();
  if (version != Checkpoint::version)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  ModelShape shape;
  const auto keys = rr.u32();
  for (std::uint32_t k = 0; k < keys; ++k) {
    const auto key = rr.str();
    const auto value = rr.u64();
    bool known = false;
    for (const auto& [name, member] : kShapeKeys)
      if (key == name) {
        shape.*member = static_cast<std::size_t>(value);
        known = true;
      }
    if (!known) throw std::runtime_error("checkpoint: unknown hyperparameter " + key);
  }
  Checkpoint ck;
  ck.source_vocab_hash = rr.u64();
  ck.target_vocab_hash = rr.u64();
  ck.model = ModelParameters(shape);
  auto set = ck.model.parameters();
  const auto count = rr.u32();
  if (count != set.size())
    throw std::runtime_error("checkpoint: expected " + std::to_string(set.size()) + " parameters, found " +
                             std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    Parameter& p = set.find(rr.str());
    const auto rank = rr.u32();
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = static_cast<std::size_t>(rr.u64());
    if (dims != p.value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    for (auto& v : p.value.values()) v = rr.f64();
    if (!p.value.all_finite()) throw std::runtime_error("checkpoint: non-finite values in " + p.name);
  }
  if (!rr.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& model,
                     std::uint64_t source_vocab_hash, std::uint64_t target_vocab_hash) {
  const auto bytes = serialize_checkpoint(model, source_vocab_hash, target_vocab_hash);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary& source_vocab,
                           const Vocabulary& target_vocab) {
  auto ck = load_checkpoint(path);
  if (ck.source_vocab_hash != source_vocab.content_hash())
    throw std::runtime_error("checkpoint " + path.string() + ": source vocabulary hash mismatch");
  if (ck.target_vocab_hash != target_vocab.content_hash())
    throw std::runtime_error("checkpoint " + path.string() + ": target vocabulary hash mismatch");
  return ck;
}

}  // namespace seq2align
