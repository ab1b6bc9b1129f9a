#pragma once

#include "rosslink/nn/adam.hpp"
#include "rosslink/nn/param_store.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace rosslink::nn {

/// On-disk layout (all integers little-endian):
///   "RSLKCKPT"  u32 version
///   u32 meta count, then per entry: u32 key length, key bytes, u64 value
///   u64 tensor count, then per tensor: u32 name length, name bytes, u32 rank,
///   u64 extents[rank], f64 values[numel]
/// Tensors are written in name order.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::uint64_t> meta;
  std::map<std::string, ad::Tensor> tensors;

  void put_store(const std::string& prefix, const ParamStore& store);
  ParamStore get_store(const std::string& prefix) const;
  bool has_store(const std::string& prefix) const;
  void put_adam(const std::string& prefix, const AdamState& state);
  AdamState get_adam(const std::string& prefix, const AdamConfig& config) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace rosslink::nn
