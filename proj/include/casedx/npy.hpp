#pragma once

// Minimal reader/writer for the NumPy .npy container (format version 1.0).
// Voxel files are little-endian float32 ('<f4'), C order; readers also
// accept '<f8', '|u1' and '<i2' inputs and convert them to float.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <vector>

#include "casedx/error.hpp"

namespace casedx::npy {

struct Array {
  std::vector<int> shape;
  std::vector<float> data;
};

inline void write(const std::filesystem::path& path, const std::vector<int>& shape, const std::vector<float>& data) {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) dict += (i ? ", " : "") + std::to_string(shape[i]);
  if (shape.size() == 1) dict += ",";
  dict += "), }";
  // Total header (magic 6 + version 2 + length 2 + dict + newline) is padded to 64 bytes.
  std::size_t total = 10 + dict.size() + 1;
  const std::size_t pad = (64 - total % 64) % 64;
  dict.append(pad, ' ');
  dict += '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("\x93NUMPY", 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const std::uint16_t hlen = static_cast<std::uint16_t>(dict.size());
  const char len_bytes[2] = {static_cast<char>(hlen & 0xff), static_cast<char>(hlen >> 8)};
  out.write(len_bytes, 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw DataError("short write to " + path.string());
}

inline Array read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingAssetError(path.string());
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw DataError(path.string() + ": not an .npy file");
  unsigned char ver[2];
  in.read(reinterpret_cast<char*>(ver), 2);
  std::uint32_t hlen = 0;
  if (ver[0] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    hlen = b[0] | (b[1] << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    hlen = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  if (!in) throw DataError(path.string() + ": truncated header");

  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']+)')")))
    throw DataError(path.string() + ": header lacks descr");
  const std::string descr = m[1];
  if (std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*True)")))
    throw DataError(path.string() + ": fortran-ordered arrays are not supported");
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))")))
    throw DataError(path.string() + ": header lacks shape");
  Array a;
  const std::string dims = m[1];
  std::regex num(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it)
    a.shape.push_back(std::stoi(it->str()));
  std::size_t n = 1;
  for (int d : a.shape) n *= static_cast<std::size_t>(d);
  a.data.resize(n);

  auto read_as = [&](auto tag) {
    using S = decltype(tag);
    std::vector<S> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(S)));
    if (!in) throw DataError(path.string() + ": truncated data");
    for (std::size_t i = 0; i < n; ++i) a.data[i] = static_cast<float>(raw[i]);
  };
  if (descr == "<f4")
    read_as(float{});
  else if (descr == "<f8")
    read_as(double{});
  else if (descr == "|u1")
    read_as(std::uint8_t{});
  else if (descr == "<i2")
    read_as(std::int16_t{});
  else
    throw DataError(path.string() + ": unsupported dtype " + descr);
  return a;
}

}  // namespace casedx::npy
