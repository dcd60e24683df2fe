#include "bytekaz/config.hpp"

#include <cmath>
#include <functional>
#include <map>

namespace bytekaz {

using nlohmann::json;

std::string to_string(PatchStrategy s) {
  switch (s) {
    case PatchStrategy::kEntropy: return "entropy";
    case PatchStrategy::kFixedStride: return "fixed";
    case PatchStrategy::kWhitespace: return "whitespace";
  }
  return "?";
}

PatchStrategy parse_patch_strategy(const std::string& s) {
  if (s == "entropy") return PatchStrategy::kEntropy;
  if (s == "fixed" || s == "fixed_stride") return PatchStrategy::kFixedStride;
  if (s == "whitespace") return PatchStrategy::kWhitespace;
  throw Error("unknown patch strategy '" + s + "' (expected entropy, fixed, whitespace)");
}

std::string to_string(PartitionMode m) {
  switch (m) {
    case PartitionMode::kAllFrozen: return "all_frozen";
    case PartitionMode::kAttentionOnly: return "attention_only";
    case PartitionMode::kAttentionPlusNorm: return "attention_plus_norm";
    case PartitionMode::kLastKFull: return "last_k_full";
  }
  return "?";
}

PartitionMode parse_partition_mode(const std::string& s) {
  if (s == "all_frozen") return PartitionMode::kAllFrozen;
  if (s == "attention_only") return PartitionMode::kAttentionOnly;
  if (s == "attention_plus_norm") return PartitionMode::kAttentionPlusNorm;
  if (s == "last_k_full") return PartitionMode::kLastKFull;
  throw Error("unknown partition mode '" + s + "'");
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw Error("config: " + msg);
}

template <typename T>
T get_as(const json& v, const std::string& path) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw Error("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() && !v.is_number_unsigned()) throw Error("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw Error("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw Error("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw Error("config: key '" + path + "' has the wrong type (got " + std::string(v.type_name()) + ")");
  }
}

using Setter = std::function<void(const json&, const std::string&)>;

void apply_table(const json& j, const std::string& prefix, const std::map<std::string, Setter>& table) {
  if (!j.is_object()) throw Error("config: '" + (prefix.empty() ? std::string("<root>") : prefix) + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    auto it = table.find(key);
    if (it == table.end()) throw Error("config: unknown key '" + path + "'");
    it->second(value, path);
  }
}

template <typename T>
Setter field(T& target) {
  return [&target](const json& v, const std::string& path) { target = get_as<T>(v, path); };
}

}  // namespace

void ModelConfig::validate() const {
  require(local.width > 0 && local.heads > 0 && local.width % local.heads == 0, "local.width must be divisible by local.heads");
  require((local.width / local.heads) % 2 == 0, "local head width must be even for rotary embeddings");
  require(local.encoder_layers >= 0 && local.decoder_layers >= 0, "local layer counts must be >= 0");
  require(local.mlp > 0, "local.mlp must be positive");
  require(body.width > 0 && body.heads > 0 && body.width % body.heads == 0, "body.width must be divisible by body.heads");
  require((body.width / body.heads) % 2 == 0, "body head width must be even for rotary embeddings");
  require(body.layers >= 1, "body.layers must be >= 1");
  require(body.mlp > 0, "body.mlp must be positive");
  require(entropy.width > 0 && entropy.heads > 0 && entropy.width % entropy.heads == 0,
          "entropy.width must be divisible by entropy.heads");
  require((entropy.width / entropy.heads) % 2 == 0, "entropy head width must be even for rotary embeddings");
  require(entropy.layers >= 0 && entropy.mlp > 0, "entropy layers/mlp invalid");
  require(entropy.context >= 2, "entropy.context must be >= 2");
  require(patch.stride >= 1, "patch.stride must be >= 1");
  require(patch.max_patch_len >= 0, "patch.max_patch_len must be >= 0");
  require(std::isfinite(patch.threshold), "patch.threshold must be finite");
  require(token_vocab == 0 || token_vocab >= kByteVocab, "token_vocab must be 0 or >= 256");
}

void TrainConfig::validate() const {
  require(stage == 'A' || stage == 'B', "stage must be A or B");
  require(alpha >= 0.0, "alpha must be >= 0");
  require(alpha == 0.0 || stage == 'A', "alignment loss is a Stage A objective");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(seq_cap >= 2, "seq_cap must be >= 2");
  require(steps >= 0, "steps must be >= 0");
  require(eval_interval >= 1, "eval_interval must be >= 1");
  require(eval_docs >= 1, "eval_docs must be >= 1");
  require(warmup_steps >= 0, "warmup_steps must be >= 0");
  require(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0, "min_lr_ratio must be in [0,1]");
  require(last_k >= 1, "last_k must be >= 1");
  for (int l : align_layers) require(l >= 0, "align_layers entries must be >= 0");
}

void apply_json(ModelConfig& c, const json& j) {
  std::map<std::string, Setter> local{
      {"width", field(c.local.width)},     {"encoder_layers", field(c.local.encoder_layers)},
      {"decoder_layers", field(c.local.decoder_layers)}, {"heads", field(c.local.heads)},
      {"mlp", field(c.local.mlp)},         {"rope_base", field(c.local.rope_base)},
      {"decoder_final_norm", field(c.local.decoder_final_norm)},
  };
  std::map<std::string, Setter> body{
      {"layers", field(c.body.layers)}, {"width", field(c.body.width)}, {"heads", field(c.body.heads)},
      {"mlp", field(c.body.mlp)},       {"rope_base", field(c.body.rope_base)},
  };
  std::map<std::string, Setter> entropy{
      {"layers", field(c.entropy.layers)}, {"width", field(c.entropy.width)}, {"heads", field(c.entropy.heads)},
      {"mlp", field(c.entropy.mlp)},       {"context", field(c.entropy.context)},
  };
  std::map<std::string, Setter> patch{
      {"strategy", [&](const json& v, const std::string& p) { c.patch.strategy = parse_patch_strategy(get_as<std::string>(v, p)); }},
      {"threshold", field(c.patch.threshold)},
      {"stride", field(c.patch.stride)},
      {"max_patch_len", field(c.patch.max_patch_len)},
  };
  std::map<std::string, Setter> root{
      {"local", [&](const json& v, const std::string& p) { apply_table(v, p, local); }},
      {"body", [&](const json& v, const std::string& p) { apply_table(v, p, body); }},
      {"entropy", [&](const json& v, const std::string& p) { apply_table(v, p, entropy); }},
      {"patch", [&](const json& v, const std::string& p) { apply_table(v, p, patch); }},
      {"token_vocab", field(c.token_vocab)},
  };
  apply_table(j, "model", root);
  c.validate();
}

void apply_json(TrainConfig& c, const json& j) {
  std::map<std::string, Setter> root{
      {"stage",
       [&](const json& v, const std::string& p) {
         const auto s = get_as<std::string>(v, p);
         require(s == "A" || s == "B", "key '" + p + "' must be \"A\" or \"B\"");
         c.stage = s[0];
       }},
      {"alpha", field(c.alpha)},
      {"align_layers", [&](const json& v, const std::string& p) {
         require(v.is_array(), "key '" + p + "' must be an array of layer indices");
         c.align_layers.clear();
         for (const auto& e : v) c.align_layers.push_back(get_as<int>(e, p + "[]"));
       }},
      {"learning_rate", field(c.learning_rate)},
      {"weight_decay", field(c.weight_decay)},
      {"warmup_steps", field(c.warmup_steps)},
      {"min_lr_ratio", field(c.min_lr_ratio)},
      {"batch_size", field(c.batch_size)},
      {"seq_cap", field(c.seq_cap)},
      {"steps", field(c.steps)},
      {"seed", field(c.seed)},
      {"eval_interval", field(c.eval_interval)},
      {"eval_docs", field(c.eval_docs)},
      {"partition", [&](const json& v, const std::string& p) { c.partition = parse_partition_mode(get_as<std::string>(v, p)); }},
      {"last_k", field(c.last_k)},
      {"grad_clip", field(c.grad_clip)},
  };
  apply_table(j, "train", root);
  c.validate();
}

json to_json(const ModelConfig& c) {
  return json{
      {"local",
       {{"width", c.local.width},
        {"encoder_layers", c.local.encoder_layers},
        {"decoder_layers", c.local.decoder_layers},
        {"heads", c.local.heads},
        {"mlp", c.local.mlp},
        {"rope_base", c.local.rope_base},
        {"decoder_final_norm", c.local.decoder_final_norm}}},
      {"body",
       {{"layers", c.body.layers}, {"width", c.body.width}, {"heads", c.body.heads}, {"mlp", c.body.mlp}, {"rope_base", c.body.rope_base}}},
      {"entropy",
       {{"layers", c.entropy.layers},
        {"width", c.entropy.width},
        {"heads", c.entropy.heads},
        {"mlp", c.entropy.mlp},
        {"context", c.entropy.context}}},
      {"patch",
       {{"strategy", to_string(c.patch.strategy)},
        {"threshold", c.patch.threshold},
        {"stride", c.patch.stride},
        {"max_patch_len", c.patch.max_patch_len}}},
      {"token_vocab", c.token_vocab},
  };
}

json to_json(const TrainConfig& c) {
  return json{
      {"stage", std::string(1, c.stage)},
      {"alpha", c.alpha},
      {"align_layers", c.align_layers},
      {"learning_rate", c.learning_rate},
      {"weight_decay", c.weight_decay},
      {"warmup_steps", c.warmup_steps},
      {"min_lr_ratio", c.min_lr_ratio},
      {"batch_size", c.batch_size},
      {"seq_cap", c.seq_cap},
      {"steps", c.steps},
      {"seed", c.seed},
      {"eval_interval", c.eval_interval},
      {"eval_docs", c.eval_docs},
      {"partition", to_string(c.partition)},
      {"last_k", c.last_k},
      {"grad_clip", c.grad_clip},
  };
}

}  // namespace bytekaz
