// SPDX-License-Identifier: Apache-2.0
#include "moco/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace moco::io {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'C', 'O', 'A', 'R', 'R', '1'};

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void ArrayContainer::put(const std::string& name, const Tensor& t) {
  NamedArray a;
  a.name = name;
  a.dtype = "f64";
  a.dims = t.shape();
  a.f64 = t.storage();
  store(std::move(a));
}

void ArrayContainer::put_u8(const std::string& name, Shape dims, std::vector<std::uint8_t> bytes) {
  if (numel(dims) != bytes.size()) throw ShapeError("put_u8: byte count does not match dims");
  NamedArray a;
  a.name = name;
  a.dtype = "u8";
  a.dims = std::move(dims);
  a.u8 = std::move(bytes);
  store(std::move(a));
}

void ArrayContainer::store(NamedArray a) {
  for (auto& existing : arrays)
    if (existing.name == a.name) {
      existing = std::move(a);
      return;
    }
  arrays.push_back(std::move(a));
}

const NamedArray* ArrayContainer::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

Tensor ArrayContainer::tensor(const std::string& name) const {
  const NamedArray* a = find(name);
  if (!a) throw IOError("container has no array named '" + name + "'");
  if (a->dtype == "f64") return Tensor(a->dims, a->f64);
  std::vector<double> v(a->u8.begin(), a->u8.end());
  for (auto& x : v) x /= 255.0;
  return Tensor(a->dims, std::move(v));
}

void write_container(const std::filesystem::path& path, const ArrayContainer& c) {
  nlohmann::json header;
  header["meta"] = c.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    const std::uint64_t nbytes = a.dtype == "f64" ? a.f64.size() * 8 : a.u8.size();
    header["arrays"].push_back({{"name", a.name}, {"dtype", a.dtype}, {"dims", a.dims}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IOError("cannot open for writing: " + path.string());
  os.write(kMagic, 8);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : c.arrays) {
    if (a.dtype == "f64")
      os.write(reinterpret_cast<const char*>(a.f64.data()), static_cast<std::streamsize>(a.f64.size() * 8));
    else
      os.write(reinterpret_cast<const char*>(a.u8.data()), static_cast<std::streamsize>(a.u8.size()));
  }
  if (!os) throw IOError("write failed: " + path.string());
}

ArrayContainer read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw IOError("not an array container: " + path.string());
  const std::uint64_t hlen = read_u64(is);
  std::string text(hlen, '\0');
  is.read(text.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw IOError("truncated header: " + path.string());
  const auto header = nlohmann::json::parse(text);
  ArrayContainer c;
  c.meta = header.at("meta");
  const auto payload_start = is.tellg();
  for (const auto& h : header.at("arrays")) {
    NamedArray a;
    a.name = h.at("name").get<std::string>();
    a.dtype = h.at("dtype").get<std::string>();
    a.dims = h.at("dims").get<Shape>();
    const auto nbytes = h.at("nbytes").get<std::uint64_t>();
    is.seekg(payload_start + static_cast<std::streamoff>(h.at("offset").get<std::uint64_t>()));
    if (a.dtype == "f64") {
      a.f64.resize(nbytes / 8);
      is.read(reinterpret_cast<char*>(a.f64.data()), static_cast<std::streamsize>(nbytes));
    } else if (a.dtype == "u8") {
      a.u8.resize(nbytes);
      is.read(reinterpret_cast<char*>(a.u8.data()), static_cast<std::streamsize>(nbytes));
    } else {
      throw IOError("unsupported dtype '" + a.dtype + "' in " + path.string());
    }
    if (!is) throw IOError("truncated payload: " + path.string());
    if (numel(a.dims) * (a.dtype == "f64" ? 8 : 1) != nbytes) throw IOError("dims/nbytes mismatch for " + a.name);
    c.arrays.push_back(std::move(a));
  }
  return c;
}

void write_png_rgb(const std::filesystem::path& path, std::size_t width, std::size_t height,
                   const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != width * height * 3) throw ShapeError("write_png_rgb: buffer size mismatch");
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IOError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IOError("libpng failure writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) png_write_row(png, const_cast<png_bytep>(rgb.data() + y * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

std::vector<std::uint8_t> to_u8(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
  }
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IOError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IOError("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw IOError("write failed: " + path.string());
}

}  // namespace moco::io
