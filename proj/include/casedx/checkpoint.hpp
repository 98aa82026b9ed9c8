#pragma once

// Checkpoint container: 8-byte magic, u32 format version, u64 header length,
// a JSON header, then little-endian float32 arrays back to back. The header
// lists every array with its name, shape, offset (in floats) and whether it
// is trainable.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casedx/corpus.hpp"
#include "casedx/nn.hpp"

namespace casedx {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'S', 'E', 'D', 'X', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
  bool trainable = true;
};

struct CheckpointFile {
  json meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

inline void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ck) {
  json header{{"meta", ck.meta}, {"arrays", json::array()}};
  std::uint64_t offset = 0;
  for (const auto& a : ck.arrays) {
    if (shape_size(a.shape) != a.data.size()) throw ShapeError("checkpoint array " + a.name + " size does not match its shape");
    header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"trainable", a.trainable}});
    offset += a.data.size();
  }
  const std::string text = header.dump();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : ck.arrays)
      out.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingAssetError(path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw DataError(path.string() + " is not a checkpoint");
  if (version != kCheckpointVersion)
    throw DataError(path.string() + ": checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated header");
  CheckpointFile ck;
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  ck.meta = header.at("meta");
  const std::streampos base = in.tellg();
  for (const auto& a : header.at("arrays")) {
    NamedArray arr;
    arr.name = a.at("name").get<std::string>();
    arr.shape = a.at("shape").get<Shape>();
    arr.trainable = a.at("trainable").get<bool>();
    arr.data.resize(shape_size(arr.shape));
    in.seekg(base + static_cast<std::streamoff>(a.at("offset").get<std::uint64_t>() * sizeof(float)));
    in.read(reinterpret_cast<char*>(arr.data.data()), static_cast<std::streamsize>(arr.data.size() * sizeof(float)));
    if (!in) throw DataError(path.string() + ": truncated array " + arr.name);
    ck.arrays.push_back(std::move(arr));
  }
  return ck;
}

template <class T>
void append_params(CheckpointFile& ck, const ParamStore<T>& ps, const std::string& prefix = "") {
  for (const auto& [name, v] : ps.entries()) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    const auto& s = v.value().storage();
    ck.arrays.push_back({name, v.shape(), std::vector<float>(s.begin(), s.end()), v.requires_grad()});
  }
}

// Fills a store with every array whose name starts with prefix.
template <class T>
void load_params(const CheckpointFile& ck, ParamStore<T>& ps, const std::string& prefix = "") {
  for (const auto& a : ck.arrays) {
    if (!prefix.empty() && a.name.rfind(prefix, 0) != 0) continue;
    ps.insert(a.name, Tensor<T>(a.shape, std::vector<T>(a.data.begin(), a.data.end())), a.trainable);
  }
}

}  // namespace casedx
