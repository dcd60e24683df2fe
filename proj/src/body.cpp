#include "bytekaz/body.hpp"

namespace bytekaz {

bool body_group_trainable(const std::string& group, int layers, PartitionMode mode, int last_k) {
  if (group == kBodyFinalNormGroup) return mode == PartitionMode::kLastKFull;
  // body.L<layer>.<kind>
  const auto dot = group.find('.', 6);
  if (group.rfind("body.L", 0) != 0 || dot == std::string::npos) throw Error("partition: unexpected body group " + group);
  const int layer = std::stoi(group.substr(6, dot - 6));
  const auto kind = group.substr(dot + 1);
  const bool projection = kind == "attn.q" || kind == "attn.k" || kind == "attn.v" || kind == "attn.o";
  switch (mode) {
    case PartitionMode::kAllFrozen: return false;
    case PartitionMode::kAttentionOnly: return projection;
    case PartitionMode::kAttentionPlusNorm: return projection || kind == "attn.norm";
    case PartitionMode::kLastKFull: return layer >= layers - last_k;
  }
  return false;
}

const GroupInfo& ParamPartition::group(const std::string& name) const {
  for (const auto& g : groups)
    if (g.name == name) return g;
  throw Error("partition: unknown group " + name);
}

Eigen::Index ParamPartition::trainable_parameters(const std::string& prefix) const {
  Eigen::Index n = 0;
  for (const auto& g : groups)
    if (g.trainable && g.name.rfind(prefix, 0) == 0) n += g.parameters;
  return n;
}

nlohmann::json ParamPartition::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& g : groups) arr.push_back({{"group", g.name}, {"parameters", g.parameters}, {"trainable", g.trainable}});
  return arr;
}

}  // namespace bytekaz
