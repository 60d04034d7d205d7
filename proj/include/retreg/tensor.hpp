#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace retreg {

/// Dense row-major float32 tensor.
///
/// On disk (".tns"): the ASCII magic "TNSR", a little-endian u32 rank, rank
/// little-endian u32 dims, then the row-major f32 little-endian payload.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::uint32_t> shape, std::vector<float> values);
  explicit Tensor(std::vector<std::uint32_t> shape, float fill = 0.0f);

  std::size_t rank() const { return dims.size(); }
  std::size_t size() const { return data.size(); }

  // 2-D / 3-D accessors; no bounds checking.
  float& at(std::size_t i, std::size_t j) { return data[i * dims[1] + j]; }
  float at(std::size_t i, std::size_t j) const { return data[i * dims[1] + j]; }
  float& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * dims[1] + j) * dims[2] + k];
  }
  float at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * dims[1] + j) * dims[2] + k];
  }

  bool operator==(const Tensor&) const = default;
};

std::size_t element_count(std::span<const std::uint32_t> dims);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& t);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace retreg
