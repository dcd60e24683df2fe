#pragma once

// The global transformer body. It consumes continuous patch (or token)
// vectors, applies RoPE over the supplied position indices, and has neither
// an embedding table nor an output head of its own.

#include "bytekaz/config.hpp"
#include "bytekaz/nn.hpp"

#include <json.hpp>

namespace bytekaz {

inline std::string body_group(const std::string& kind, int layer) { return "body.L" + std::to_string(layer) + "." + kind; }
inline constexpr const char* kBodyFinalNormGroup = "body.final_norm";
inline constexpr const char* kTeacherEmbeddingGroup = "teacher.embedding";

template <typename Scalar>
class GlobalBody {
 public:
  GlobalBody(ParamStore<Scalar>& store, const BodyConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg), stack_(store, "body", cfg.layers, BlockShape{cfg.width, cfg.heads, cfg.mlp, cfg.rope_base, false}, body_group,
                           kBodyFinalNormGroup, rng) {}

  /// Causal forward over m input vectors at the given (strictly increasing)
  /// positions. `trace` receives per-layer outputs and attention scores.
  Var<Scalar> forward(Tape<Scalar>& t, const Var<Scalar>& input, std::span<const double> positions,
                      StackTrace<Scalar>* trace = nullptr) const {
    if (input.cols() != cfg_.width) throw Error("body_forward: input width does not match body width");
    if (static_cast<std::size_t>(input.rows()) != positions.size()) throw Error("body_forward: one position per input row required");
    for (std::size_t i = 1; i < positions.size(); ++i)
      if (!(positions[i] > positions[i - 1])) throw Error("body_forward: positions must be strictly increasing");
    return stack_.forward(t, input, positions, causal_mask(input.rows()), nullptr, trace);
  }

  const BodyConfig& config() const { return cfg_; }

 private:
  BodyConfig cfg_;
  TransformerStack<Scalar> stack_;
};

/// Group name -> parameter count -> trainable flag.
struct GroupInfo {
  std::string name;
  Eigen::Index parameters = 0;
  bool trainable = false;
};

struct ParamPartition {
  std::vector<GroupInfo> groups;

  const GroupInfo& group(const std::string& name) const;
  Eigen::Index trainable_parameters(const std::string& prefix = "") const;
  nlohmann::json to_json() const;
};

template <typename Scalar>
ParamPartition describe_partition(const ParamStore<Scalar>& store) {
  ParamPartition out;
  std::map<std::string, std::size_t> at;
  for (const auto& p : store) {
    auto it = at.find(p->group);
    if (it == at.end()) {
      at[p->group] = out.groups.size();
      out.groups.push_back({p->group, p->size(), p->trainable});
    } else {
      auto& g = out.groups[it->second];
      g.parameters += p->size();
      if (g.trainable != p->trainable) throw Error("partition: group " + p->group + " has mixed trainable flags");
    }
  }
  return out;
}

/// Whether a body group is trainable under `mode`. Group names look like
/// "body.L3.attn.q" or "body.final_norm".
bool body_group_trainable(const std::string& group, int layers, PartitionMode mode, int last_k);

/// Sets trainable flags on every body parameter per `mode` (non-body groups
/// are untouched) and returns the resulting partition.
template <typename Scalar>
ParamPartition partition_parameters(ParamStore<Scalar>& store, const BodyConfig& body, PartitionMode mode, int last_k = 1) {
  if (mode == PartitionMode::kLastKFull && (last_k < 1 || last_k > body.layers))
    throw Error("partition_parameters: k=" + std::to_string(last_k) + " outside [1, " + std::to_string(body.layers) + "]");
  for (auto& p : store)
    if (p->group.rfind("body.", 0) == 0) p->trainable = body_group_trainable(p->group, body.layers, mode, last_k);
  return describe_partition(store);
}

}  // namespace bytekaz
