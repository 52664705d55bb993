#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "densr/image.hpp"
#include "densr/tensor.hpp"

namespace densr {
namespace io {

// Length-prefixed named float32 arrays; the payload block of checkpoints and
// extractor weight files.

template <class S>
void write_named_array(std::FILE* f, const std::string& name, const Tensor<S>& t) {
  const std::uint32_t nlen = static_cast<std::uint32_t>(name.size());
  std::fwrite(&nlen, sizeof(nlen), 1, f);
  std::fwrite(name.data(), 1, name.size(), f);
  const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
  std::fwrite(&rank, sizeof(rank), 1, f);
  std::vector<std::uint32_t> dims(t.shape.begin(), t.shape.end());
  std::fwrite(dims.data(), sizeof(std::uint32_t), dims.size(), f);
  std::vector<float> payload(t.data.begin(), t.data.end());
  if (!payload.empty()) std::fwrite(payload.data(), sizeof(float), payload.size(), f);
}

template <class S>
std::pair<std::string, Tensor<S>> read_named_array(std::FILE* f) {
  std::uint32_t nlen = 0;
  if (std::fread(&nlen, sizeof(nlen), 1, f) != 1) throw std::runtime_error("truncated array block");
  if (nlen > 4096) throw std::runtime_error("implausible array name length");
  std::string name(nlen, '\0');
  if (nlen && std::fread(name.data(), 1, nlen, f) != nlen)
    throw std::runtime_error("truncated array name");
  std::uint32_t rank = 0;
  if (std::fread(&rank, sizeof(rank), 1, f) != 1 || rank == 0 || rank > 8)
    throw std::runtime_error("bad array rank for " + name);
  std::vector<std::uint32_t> dims(rank);
  if (std::fread(dims.data(), sizeof(std::uint32_t), rank, f) != rank)
    throw std::runtime_error("truncated dims for " + name);
  Tensor<S> t(std::vector<int>(dims.begin(), dims.end()));
  std::vector<float> payload(static_cast<std::size_t>(t.numel()));
  if (!payload.empty() && std::fread(payload.data(), sizeof(float), payload.size(), f) != payload.size())
    throw std::runtime_error("truncated payload for " + name);
  for (std::size_t i = 0; i < payload.size(); ++i) t.data[i] = static_cast<S>(payload[i]);
  return {name, std::move(t)};
}

inline constexpr std::uint32_t kWeightsMagic = 0x31574e44u;  // "DNW1"

/// Standalone weight file: magic, count, named arrays.
template <class S>
void write_weights_file(const std::string& path,
                        const std::vector<std::pair<std::string, const Tensor<S>*>>& arrays) {
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::fwrite(&kWeightsMagic, sizeof(kWeightsMagic), 1, f.get());
  const std::uint32_t count = static_cast<std::uint32_t>(arrays.size());
  std::fwrite(&count, sizeof(count), 1, f.get());
  for (const auto& [name, t] : arrays) write_named_array(f.get(), name, *t);
}

template <class S>
std::map<std::string, Tensor<S>> read_weights_file(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  std::uint32_t magic = 0, count = 0;
  if (std::fread(&magic, sizeof(magic), 1, f.get()) != 1 || magic != kWeightsMagic)
    throw std::runtime_error("bad weights file magic: " + path);
  if (std::fread(&count, sizeof(count), 1, f.get()) != 1)
    throw std::runtime_error("truncated weights file: " + path);
  std::map<std::string, Tensor<S>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = read_named_array<S>(f.get());
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace io
}  // namespace densr
