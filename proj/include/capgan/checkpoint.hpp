#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "capgan/param_store.hpp"

namespace capgan {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameter container.
///
/// Layout (all integers little-endian):
///   "CAPGANCK"  u32 version  u64 header_len  header_json
///   u64 n_params  { u32 name_len  name  u64 rows  u64 cols  f64[rows*cols] }*
///
/// The header is a JSON object carrying at least `seed` and `vocab_hash`;
/// callers add model dimensions and hyperparameters. Output is a pure
/// function of (header, params), so identical runs give identical bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json header;
  ParamStore params;

  std::string to_bytes() const;
  static Checkpoint from_bytes(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// FNV-1a of the serialized bytes, hex encoded.
  std::string content_hash() const;
};

}  // namespace capgan
