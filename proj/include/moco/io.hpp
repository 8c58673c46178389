// SPDX-License-Identifier: Apache-2.0
//
// Binary array container used for rasters, videos and checkpoints.
//
// Layout (all integers little-endian):
//   8 bytes   magic "MOCOARR1"
//   8 bytes   u64 header length N
//   N bytes   UTF-8 JSON header {"meta": {...}, "arrays": [{"name", "dtype", "dims", "offset", "nbytes"}]}
//   ...       payload; each array at header offset relative to payload start
// dtype is "f64" (IEEE-754 binary64) or "u8".
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "moco/tensor.hpp"

namespace moco::io {

class IOError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  std::string dtype;  // "f64" or "u8"
  Shape dims;
  std::vector<double> f64;
  std::vector<std::uint8_t> u8;
};

struct ArrayContainer {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  void put(const std::string& name, const Tensor& t);
  void put_u8(const std::string& name, Shape dims, std::vector<std::uint8_t> bytes);
  /// Replaces an array of the same name, appends otherwise.
  void store(NamedArray a);
  const NamedArray* find(const std::string& name) const;
  Tensor tensor(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const ArrayContainer& c);
ArrayContainer read_container(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG. `rgb` holds height*width*3 bytes, row-major.
void write_png_rgb(const std::filesystem::path& path, std::size_t width, std::size_t height,
                   const std::vector<std::uint8_t>& rgb);

/// Quantizes a float image in [0, 1] (H, W, 3) to bytes with round-half-up.
std::vector<std::uint8_t> to_u8(std::span<const double> values);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace moco::io
