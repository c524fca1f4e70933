#pragma once

// Versioned checkpoint container: named parameter arrays stored as
// little-endian float32 with explicit shapes. Shared by model checkpoints
// and memory snapshots.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "mapclip/nn.hpp"

namespace mapclip::nn {

inline constexpr char kCkptMagic[4] = {'M', 'C', 'P', 'K'};
inline constexpr uint32_t kCkptVersion = 1;

template <typename R>
void save_named_tensors(const std::filesystem::path& path,
                        const std::map<std::string, Tensor<R>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "checkpoint: cannot open for writing: " + path.string());
  os.write(kCkptMagic, 4);
  os.write(reinterpret_cast<const char*>(&kCkptVersion), sizeof(kCkptVersion));
  const uint64_t count = tensors.size();
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, t] : tensors) {
    const uint32_t name_len = static_cast<uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    os.write(name.data(), name_len);
    const uint32_t ndim = static_cast<uint32_t>(t.shape.size());
    os.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
    for (int64_t d : t.shape) os.write(reinterpret_cast<const char*>(&d), sizeof(d));
    for (int64_t i = 0; i < t.numel(); ++i) {
      const float v = static_cast<float>(t.data[static_cast<size_t>(i)]);
      os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}

inline std::map<std::string, Tensor<float>> load_named_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw FormatError("checkpoint: file not found: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic in " + path.string());
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kCkptVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  uint64_t count = 0;
  is.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::map<std::string, Tensor<float>> out;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (!is.good() || name_len > (1u << 20)) throw FormatError("checkpoint: truncated entry header");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t ndim = 0;
    is.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
    if (!is.good() || ndim > 8) throw FormatError("checkpoint: invalid rank for " + name);
    Shape shape(ndim);
    for (auto& d : shape) is.read(reinterpret_cast<char*>(&d), sizeof(d));
    Tensor<float> t = Tensor<float>::zeros(shape);
    is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(t.numel() * sizeof(float)))
      throw FormatError("checkpoint: truncated data for " + name);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

template <typename R>
void save_params(const std::filesystem::path& path, const ParamSet<R>& params) {
  std::map<std::string, Tensor<R>> named;
  for (const auto& p : params.items()) named.emplace(p->name, p->value);
  save_named_tensors(path, named);
}

// Strict: the checkpoint must contain exactly the registered parameters
// with matching shapes.
template <typename R>
void load_params(const std::filesystem::path& path, ParamSet<R>& params) {
  auto named = load_named_tensors(path);
  for (const auto& p : params.items()) {
    auto it = named.find(p->name);
    if (it == named.end())
      throw FormatError("checkpoint: parameter missing: " + p->name +
                        " (config does not match this checkpoint)");
    if (it->second.shape != p->value.shape)
      throw FormatError("checkpoint: shape mismatch for " + p->name);
    p->value = it->second.template cast<R>();
    named.erase(it);
  }
  if (!named.empty())
    throw FormatError("checkpoint: unexpected extra parameter: " + named.begin()->first);
}

}  // namespace mapclip::nn
