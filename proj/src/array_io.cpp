#include "demorph/array_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <utility>
#include <vector>

namespace demorph {

namespace {

constexpr std::uint32_t kFloat32 = 1;
constexpr std::uint32_t kRank = 4;
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 8 * kRank;

template <typename U>
U swap_bytes(U value) {
  char b[sizeof(U)];
  std::memcpy(b, &value, sizeof(U));
  for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
  std::memcpy(&value, b, sizeof(U));
  return value;
}

template <typename U>
void put(std::vector<char>& out, U value) {
  if constexpr (std::endian::native == std::endian::big) value = swap_bytes(value);
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(U));
}

template <typename U>
U get(const char* p) {
  U value;
  std::memcpy(&value, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) value = swap_bytes(value);
  return value;
}

struct Header {
  Shape shape;
  std::uintmax_t file_size = 0;
};

Header read_header(const std::filesystem::path& path, std::ifstream& in) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IntegrityError("missing array file " + path.string());
  if (size < kHeaderBytes) throw IntegrityError("truncated array header in " + path.string());
  char raw[kHeaderBytes];
  in.read(raw, kHeaderBytes);
  if (!in) throw IntegrityError("cannot read array header in " + path.string());
  if (std::memcmp(raw, kArrayMagic, 8) != 0) throw IntegrityError("bad array magic in " + path.string());
  if (get<std::uint32_t>(raw + 8) != kFloat32) throw IntegrityError("unsupported dtype in " + path.string());
  if (get<std::uint32_t>(raw + 12) != kRank) throw IntegrityError("unsupported rank in " + path.string());
  std::int64_t dims[kRank];
  for (std::uint32_t i = 0; i < kRank; ++i) {
    dims[i] = get<std::int64_t>(raw + 16 + 8 * i);
    if (dims[i] < 0 || dims[i] > (1 << 24)) throw IntegrityError("bad dimension in " + path.string());
  }
  Header h;
  h.shape = Shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                  static_cast<int>(dims[3])};
  h.file_size = size;
  const std::uintmax_t expected = kHeaderBytes + h.shape.numel() * sizeof(float);
  if (size != expected) {
    throw IntegrityError("array file " + path.string() + " has " + std::to_string(size) +
                         " bytes, header implies " + std::to_string(expected));
  }
  return h;
}

}  // namespace

void write_array(const std::filesystem::path& path, const Tensor<float>& tensor) {
  std::vector<char> buf;
  buf.reserve(kHeaderBytes + tensor.shape().numel() * sizeof(float));
  buf.insert(buf.end(), kArrayMagic, kArrayMagic + 8);
  put<std::uint32_t>(buf, kFloat32);
  put<std::uint32_t>(buf, kRank);
  const Shape& s = tensor.shape();
  for (int d : {s.n, s.c, s.h, s.w}) put<std::int64_t>(buf, d);
  for (float v : tensor.values()) put<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

Tensor<float> read_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("missing array file " + path.string());
  const Header h = read_header(path, in);
  Tensor<float> t(h.shape);
  std::vector<char> raw(t.shape().numel() * sizeof(float));
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IntegrityError("truncated array payload in " + path.string());
  auto v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::bit_cast<float>(get<std::uint32_t>(raw.data() + 4 * i));
  }
  return t;
}

Shape read_array_shape(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("missing array file " + path.string());
  return read_header(path, in).shape;
}

}  // namespace demorph
