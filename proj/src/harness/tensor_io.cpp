#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "acmseg/harness.hpp"

namespace acm::harness {

namespace {

constexpr std::uint8_t kMagic[4] = {'A', 'C', 'M', 'T'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kF32 = 0;

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes little-endian");

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (!t.defined()) fail(Errc::ShapeMismatch, "cannot encode an undefined tensor");
  if (t.dim() > 255) fail(Errc::ShapeMismatch, "rank above 255");
  const Tensor f = t.to(DType::f32);
  std::vector<std::uint8_t> b(kMagic, kMagic + 4);
  b.push_back(kVersion);
  b.push_back(kF32);
  b.push_back(static_cast<std::uint8_t>(f.dim()));
  for (auto d : f.shape()) put_u32(b, static_cast<std::uint32_t>(d));
  const auto data = f.data<float>();
  const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
  b.insert(b.end(), p, p + data.size() * sizeof(float));
  return b;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& b) {
  if (b.size() < 7) fail(Errc::LengthMismatch, "tensor header truncated");
  if (std::memcmp(b.data(), kMagic, 4) != 0) fail(Errc::BadMagic, "not an ACMT tensor file");
  if (b[4] != kVersion) fail(Errc::BadVersion, "unsupported tensor version " + std::to_string(b[4]));
  if (b[5] != kF32) fail(Errc::BadVersion, "unsupported dtype code " + std::to_string(b[5]));
  const std::size_t rank = b[6];
  if (b.size() < 7 + 4 * rank) fail(Errc::LengthMismatch, "tensor dims truncated");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint32_t d;
    std::memcpy(&d, b.data() + 7 + 4 * i, 4);
    shape[i] = d;
  }
  const std::size_t off = 7 + 4 * rank;
  const std::size_t n = static_cast<std::size_t>(numel(shape));
  if (b.size() - off != n * sizeof(float)) {
    fail(Errc::LengthMismatch, "payload holds " + std::to_string(b.size() - off) + " bytes, shape " +
                                   to_string(shape) + " needs " + std::to_string(n * 4));
  }
  std::vector<float> data(n);
  if (n) std::memcpy(data.data(), b.data() + off, n * sizeof(float));
  return Tensor::from<float>(std::move(shape), std::move(data));
}

void write_tensor(const std::string& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(Errc::Io, "write failed: " + path);
}

Tensor read_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace acm::harness
