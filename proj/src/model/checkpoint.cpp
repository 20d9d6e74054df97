#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "acmseg/model.hpp"

namespace acm::model {

namespace {

constexpr char kMagic[4] = {'A', 'C', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<char>& bytes() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& b, std::size_t end) : b_(b), end_(end) {}
  void raw(void* p, std::size_t n) {
    if (pos_ + n > end_) fail(Errc::LengthMismatch, "checkpoint truncated");
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<char>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void write_record(Writer& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u8(static_cast<std::uint8_t>(t.dim()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  const Tensor f = t.to(DType::f32);
  const auto data = f.data<float>();
  w.raw(data.data(), data.size() * sizeof(float));
}

struct RawCheckpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> records;
};

RawCheckpoint read_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) fail(Errc::LengthMismatch, "checkpoint too short: " + path);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(Errc::BadMagic, "not an ACMC file: " + path);
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
  if (crc != stored) fail(Errc::ChecksumMismatch, "checkpoint CRC mismatch: " + path);

  Reader r(bytes, body);
  char magic[4];
  r.raw(magic, 4);
  if (r.u32() != kVersion) fail(Errc::BadVersion, "unsupported checkpoint version");
  RawCheckpoint out;
  out.config_text = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<float> data(static_cast<std::size_t>(numel(shape)));
    r.raw(data.data(), data.size() * sizeof(float));
    out.records.emplace_back(std::move(name), Tensor::from<float>(shape, std::move(data)));
  }
  if (!r.done()) fail(Errc::LengthMismatch, "trailing bytes in checkpoint");
  return out;
}

struct Header {
  ModelConfig cfg;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

Header parse_header(const std::string& text) {
  Header h;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(Errc::InvalidConfig, "bad checkpoint config line: " + line);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "seed") h.seed = std::stoull(value);
    else if (key == "step") h.step = std::stoull(value);
    else if (!set_config_key(h.cfg, key, value))
      fail(Errc::InvalidConfig, "unknown checkpoint config key: " + key);
  }
  return h;
}

CheckpointState assign(Model& m, RawCheckpoint& raw, std::uint64_t step) {
  std::map<std::string, Tensor*> slots;
  for (Parameter* p : m.parameters()) slots[p->name] = &p->value;
  for (Buffer* b : m.buffers()) slots[b->name] = &b->value;
  CheckpointState state;
  state.step = step;
  std::size_t matched = 0;
  for (auto& [name, t] : raw.records) {
    auto it = slots.find(name);
    if (it == slots.end()) {
      state.extra.emplace_back(name, t.to(m.dtype()));
      continue;
    }
    if (it->second->shape() != t.shape()) {
      fail(Errc::ConfigMismatch, name + ": stored shape " + to_string(t.shape()) +
                                     " vs model " + to_string(it->second->shape()));
    }
    *it->second = t.to(m.dtype());
    ++matched;
  }
  if (matched != slots.size()) {
    fail(Errc::ConfigMismatch, "checkpoint is missing " + std::to_string(slots.size() - matched) +
                                   " model tensors");
  }
  return state;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m, const CheckpointState& state) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.str(to_text(m.config()) + "seed=" + std::to_string(m.seed()) + "\nstep=" +
        std::to_string(state.step) + "\n");
  w.u32(static_cast<std::uint32_t>(m.parameters().size() + m.buffers().size() +
                                   state.extra.size()));
  for (const Parameter* p : m.parameters()) write_record(w, p->name, p->value);
  for (const Buffer* b : m.buffers()) write_record(w, b->name, b->value);
  for (const auto& [name, t] : state.extra) write_record(w, name, t);
  auto& bytes = w.bytes();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
  w.u32(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::Io, "cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::Io, "short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  RawCheckpoint raw = read_raw(path);
  const Header h = parse_header(raw.config_text);
  LoadedCheckpoint out;
  out.model = Model::build(h.cfg, h.seed);
  out.state = assign(*out.model, raw, h.step);
  return out;
}

CheckpointState load_checkpoint_into(const std::string& path, Model& m) {
  RawCheckpoint raw = read_raw(path);
  const Header h = parse_header(raw.config_text);
  if (!(h.cfg == m.config())) {
    fail(Errc::ConfigMismatch, "checkpoint config differs from the model:\n" + to_text(h.cfg));
  }
  return assign(m, raw, h.step);
}

}  // namespace acm::model
