#pragma once

// Named-tensor checkpoint container. Binary layout (little-endian):
//   magic "SLCK" | u32 version | u32 meta_len | metadata JSON (UTF-8)
//   | u32 n_tensors | per tensor: u32 name_len, name, u32 ndim, u32 dims...,
//     f32 data (row-major)
// Save/load round-trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "slue/common.hpp"

namespace slue {

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::vector<int> shape;
    std::vector<float> data;
  };

  nlohmann::json metadata;

  void put(const std::string& name, std::vector<int> shape,
           std::vector<float> data) {
    if (!tensors_.count(name)) order_.push_back(name);
    tensors_[name] = Entry{std::move(shape), std::move(data)};
  }

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }

  const Entry& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end())
      throw DataError("checkpoint: missing tensor '" + name + "'");
    return it->second;
  }

  Entry& get_mutable(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end())
      throw DataError("checkpoint: missing tensor '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot write " + path);
    f.write("SLCK", 4);
    write_u32(f, kVersion);
    const std::string meta = metadata.dump();
    write_u32(f, static_cast<std::uint32_t>(meta.size()));
    f.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    write_u32(f, static_cast<std::uint32_t>(order_.size()));
    for (const auto& name : order_) {
      const Entry& e = tensors_.at(name);
      write_u32(f, static_cast<std::uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u32(f, static_cast<std::uint32_t>(e.shape.size()));
      for (int d : e.shape) write_u32(f, static_cast<std::uint32_t>(d));
      f.write(reinterpret_cast<const char*>(e.data.data()),
              static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    if (!f) throw DataError("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot read " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "SLCK", 4) != 0)
      throw DataError("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(f);
    if (version != kVersion)
      throw DataError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    const std::uint32_t meta_len = read_u32(f);
    std::string meta(meta_len, '\0');
    f.read(meta.data(), meta_len);
    ck.metadata = nlohmann::json::parse(meta);
    const std::uint32_t n = read_u32(f);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t name_len = read_u32(f);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      const std::uint32_t ndim = read_u32(f);
      std::vector<int> shape(ndim);
      std::size_t numel = 1;
      for (auto& d : shape) {
        d = static_cast<int>(read_u32(f));
        numel *= static_cast<std::size_t>(d);
      }
      std::vector<float> data(numel);
      f.read(reinterpret_cast<char*>(data.data()),
             static_cast<std::streamsize>(numel * sizeof(float)));
      if (!f) throw DataError("checkpoint: truncated file " + path);
      ck.put(name, std::move(shape), std::move(data));
    }
    return ck;
  }

 private:
  static void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw DataError("checkpoint: truncated header");
    return v;
  }

  std::vector<std::string> order_;
  std::map<std::string, Entry> tensors_;
};

}  // namespace slue
