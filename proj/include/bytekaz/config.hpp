#pragma once

#include "bytekaz/types.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace bytekaz {

enum class PatchStrategy { kEntropy, kFixedStride, kWhitespace };

std::string to_string(PatchStrategy s);
PatchStrategy parse_patch_strategy(const std::string& s);

/// Local encoder and decoder share width, head count and MLP width.
struct LocalConfig {
  int width = 128;
  int encoder_layers = 4;
  int decoder_layers = 4;
  int heads = 4;
  int mlp = 512;
  double rope_base = 10000.0;
  bool decoder_final_norm = true;
};

struct BodyConfig {
  int layers = 4;
  int width = 256;
  int heads = 4;
  int mlp = 1024;
  double rope_base = 10000.0;
};

struct EntropyLmConfig {
  int layers = 4;
  int width = 256;
  int heads = 4;
  int mlp = 1024;
  int context = 512;
};

struct PatchConfig {
  PatchStrategy strategy = PatchStrategy::kEntropy;
  double threshold = 1.5;  // nats
  int stride = 4;
  int max_patch_len = 64;  // 0 disables the cap
};

struct ModelConfig {
  LocalConfig local;
  BodyConfig body;
  EntropyLmConfig entropy;
  PatchConfig patch;
  int token_vocab = 0;  // teacher token vocabulary; 0 until a BPE vocab is attached

  void validate() const;
};

enum class PartitionMode { kAllFrozen, kAttentionOnly, kAttentionPlusNorm, kLastKFull };

std::string to_string(PartitionMode m);
PartitionMode parse_partition_mode(const std::string& s);

struct TrainConfig {
  char stage = 'A';  // 'A' or 'B'
  double alpha = 0.0;
  std::vector<int> align_layers;  // empty -> last body layer when alpha > 0
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  int warmup_steps = 20;
  double min_lr_ratio = 0.1;
  int batch_size = 4;
  int seq_cap = 1024;
  int steps = 200;
  std::uint64_t seed = 1234;
  int eval_interval = 50;
  int eval_docs = 32;
  PartitionMode partition = PartitionMode::kAllFrozen;
  int last_k = 1;
  double grad_clip = 1.0;

  void validate() const;
};

/// Applies JSON objects onto configs. Unknown keys and type errors throw
/// Error with the offending key path.
void apply_json(ModelConfig& cfg, const nlohmann::json& j);
void apply_json(TrainConfig& cfg, const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

}  // namespace bytekaz
