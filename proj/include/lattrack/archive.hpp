#pragma once

// Single-file checkpoint archive: named dense arrays plus an embedded JSON
// document. Layout (little endian):
//
//   "LTARCH01" | u64 header_bytes | header JSON | raw array payload
//
// The header lists every array as {name, dtype, shape, offset, nbytes} with
// offsets relative to the payload start. Arrays are stored in name order so
// identical contents always produce identical bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace lattrack {

using json = nlohmann::json;

class Archive {
 public:
  json meta = json::object();

  void put(const std::string& name, const torch::Tensor& value);
  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  const torch::Tensor& get(const std::string& name) const;
  const std::map<std::string, torch::Tensor>& arrays() const { return arrays_; }

  /// Stores every parameter and buffer of `module` as "<prefix>.<name>".
  void put_module(const std::string& prefix, const torch::nn::Module& module);

  /// Copies "<prefix>.<name>" arrays into the module's parameters and buffers.
  /// Every parameter must be present with a matching shape.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;

  /// Names carrying the given prefix (prefix match on "<prefix>.").
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, torch::Tensor> arrays_;
};

/// FNV-1a over the raw bytes of a contiguous CPU tensor.
std::uint64_t checksum(const torch::Tensor& t);

/// Checksum of every named parameter of `module`, keyed "<prefix>.<name>".
std::map<std::string, std::uint64_t> param_checksums(const std::string& prefix,
                                                     const torch::nn::Module& module);

/// Stable hash of a JSON document (FNV-1a over its compact dump), hex encoded.
std::string json_hash(const json& doc);

}  // namespace lattrack
