#pragma once

#include "bytekaz/bpe.hpp"
#include "bytekaz/model.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>

namespace bytekaz {

/// First and second moment estimates for every trainable parameter.
struct OptimizerState {
  std::int64_t step = 0;
  std::map<std::string, Matrix<float>> first;
  std::map<std::string, Matrix<float>> second;
};

/// Model parameters plus everything needed to resume: config, teacher
/// vocabulary, optimizer moments, RNG state, stage tag and step counter.
///
/// Binary layout: 8-byte magic "BYTEKAZ\0", u32 format version, u64 header
/// length, UTF-8 JSON header, then little-endian float32 payloads in header
/// order (parameters, then first and second moments).
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig config;
  std::unique_ptr<ByteKazModel<float>> model;
  std::optional<BpeVocab> vocab;
  std::string stage = "init";  // "init", "0", "entropy", "A", "B"
  std::int64_t step = 0;
  std::string rng_state;
  OptimizerState optimizer;
  std::set<std::string> loaded_groups;  // groups whose values came from disk or training
  nlohmann::json metadata = nlohmann::json::object();

  static Checkpoint fresh(const ModelConfig& config, std::uint64_t seed);

  /// Writes all parameters, or only groups accepted by `keep` when given.
  void save(const std::filesystem::path& path, const std::function<bool(const std::string&)>& keep = {}) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Copies parameters of groups accepted by `keep` from `other` (same
  /// architecture required for those groups).
  void import_groups(const Checkpoint& other, const std::function<bool(const std::string&)>& keep);

  bool has_group_prefix(const std::string& prefix) const;
};

/// FNV-1a 64 over each group's serialized float32 bytes.
std::map<std::string, std::uint64_t> group_hashes(const ParamStore<float>& store);

/// Short stable hash of a model config, used to tag reports.
std::string config_hash(const ModelConfig& config);

}  // namespace bytekaz
