#include "retreg/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "retreg/error.hpp"

namespace retreg {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes[offset + b]) << (8 * b);
  return v;
}

void check_finite(std::span<const float> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw Error(ErrorCode::NonFiniteValue, "element " + std::to_string(i) + " is not finite");
    }
  }
}

}  // namespace

std::size_t element_count(std::span<const std::uint32_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t b) { return a * b; });
}

Tensor::Tensor(std::vector<std::uint32_t> shape, std::vector<float> values)
    : dims(std::move(shape)), data(std::move(values)) {
  if (element_count(dims) != data.size()) {
    throw Error(ErrorCode::DimMismatch, "tensor dims do not match payload length");
  }
}

Tensor::Tensor(std::vector<std::uint32_t> shape, float fill) : dims(std::move(shape)) {
  data.assign(element_count(dims), fill);
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (element_count(t.dims) != t.data.size()) {
    throw Error(ErrorCode::DimMismatch, "tensor dims do not match payload length");
  }
  check_finite(t.data);
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * t.dims.size() + 4 * t.data.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_u32(out, d);
  for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "missing TNSR header");
  }
  if (bytes.size() < 8) throw Error(ErrorCode::TruncatedFile, "missing rank");
  const std::uint32_t rank = get_u32(bytes, 4);
  const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw Error(ErrorCode::TruncatedFile, "missing dims");

  Tensor t;
  t.dims.resize(rank);
  for (std::uint32_t r = 0; r < rank; ++r) t.dims[r] = get_u32(bytes, 8 + 4 * r);
  const std::size_t n = element_count(t.dims);
  if (bytes.size() < header + 4 * n) {
    throw Error(ErrorCode::TruncatedFile, "payload shorter than dims imply");
  }
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.data[i] = std::bit_cast<float>(get_u32(bytes, header + 4 * i));
  }
  check_finite(t.data);
  return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path)); }

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_file_bytes(path, encode_tensor(t));
}

}  // namespace retreg
