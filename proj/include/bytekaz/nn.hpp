#pragma once

// Parameter registry and the transformer layers shared by every network in
// the project: the entropy byte LM, the local encoder/decoder, and the body.

#include "bytekaz/autograd.hpp"

#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace bytekaz {

/// Owns every parameter of a model in registration order. Names are unique;
/// every parameter belongs to exactly one group.
template <typename Scalar>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<Scalar>& add(std::string name, std::string group, int layer, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name) != 0) throw Error("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<Scalar>>();
    p->name = std::move(name);
    p->group = std::move(group);
    p->layer = layer;
    p->value = Matrix<Scalar>::Zero(rows, cols);
    index_[p->name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<Scalar>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<Scalar>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p->grad.resize(0, 0);
  }

  void set_trainable(const std::function<bool(const Parameter<Scalar>&)>& pred) {
    for (auto& p : params_) p->trainable = pred(*p);
  }

  Eigen::Index parameter_count(bool trainable_only = false) const {
    Eigen::Index n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p->trainable) n += p->size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename Scalar>
void init_normal(Parameter<Scalar>& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
struct LinearLayer {
  Parameter<Scalar>* weight = nullptr;  // in x out
  Parameter<Scalar>* bias = nullptr;    // 1 x out

  static LinearLayer create(ParamStore<Scalar>& store, const std::string& name, const std::string& group, int layer,
                            int in, int out, double stddev, std::mt19937_64& rng) {
    LinearLayer l;
    l.weight = &store.add(name + ".weight", group, layer, in, out);
    l.bias = &store.add(name + ".bias", group, layer, 1, out);
    init_normal(*l.weight, stddev, rng);
    return l;
  }

  Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) const { return linear(x, t.param(*weight), t.param(*bias)); }
};

template <typename Scalar>
struct LayerNormLayer {
  Parameter<Scalar>* gain = nullptr;
  Parameter<Scalar>* shift = nullptr;

  static LayerNormLayer create(ParamStore<Scalar>& store, const std::string& name, const std::string& group, int layer,
                               int width) {
    LayerNormLayer l;
    l.gain = &store.add(name + ".gain", group, layer, 1, width);
    l.shift = &store.add(name + ".shift", group, layer, 1, width);
    l.gain->value.setOnes();
    return l;
  }

  Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) const {
    return layer_norm(x, t.param(*gain), t.param(*shift));
  }
};

struct BlockShape {
  int width = 128;
  int heads = 4;
  int mlp = 512;
  double rope_base = 10000.0;
  bool cross_attention = false;
};

/// Maps a sub-layer kind ("attn.q", "attn.norm", "mlp", ...) and a layer
/// index to the parameter group that owns it.
using GroupNamer = std::function<std::string(const std::string& kind, int layer)>;

/// Keys/values for cross-attention plus the visibility mask (queries x keys).
template <typename Scalar>
struct CrossContext {
  Var<Scalar> states;
  const Mask* mask = nullptr;
};

template <typename Scalar>
struct BlockTrace {
  std::vector<Matrix<Scalar>> self_scores;  // one per head
};

/// Pre-norm transformer block: self-attention with RoPE, optional
/// cross-attention, GELU MLP.
template <typename Scalar>
class TransformerBlock {
 public:
  TransformerBlock(ParamStore<Scalar>& store, const std::string& prefix, int layer, const BlockShape& shape,
                   const GroupNamer& group, double residual_std, std::mt19937_64& rng)
      : shape_(shape) {
    const auto base = prefix + ".L" + std::to_string(layer);
    const int w = shape.width;
    constexpr double stdv = 0.02;
    attn_norm_ = LayerNormLayer<Scalar>::create(store, base + ".attn.norm", group("attn.norm", layer), layer, w);
    q_ = LinearLayer<Scalar>::create(store, base + ".attn.q", group("attn.q", layer), layer, w, w, stdv, rng);
    k_ = LinearLayer<Scalar>::create(store, base + ".attn.k", group("attn.k", layer), layer, w, w, stdv, rng);
    v_ = LinearLayer<Scalar>::create(store, base + ".attn.v", group("attn.v", layer), layer, w, w, stdv, rng);
    o_ = LinearLayer<Scalar>::create(store, base + ".attn.o", group("attn.o", layer), layer, w, w, residual_std, rng);
    if (shape.cross_attention) {
      cross_norm_ = LayerNormLayer<Scalar>::create(store, base + ".cross.norm", group("cross", layer), layer, w);
      cq_ = LinearLayer<Scalar>::create(store, base + ".cross.q", group("cross", layer), layer, w, w, stdv, rng);
      ck_ = LinearLayer<Scalar>::create(store, base + ".cross.k", group("cross", layer), layer, w, w, stdv, rng);
      cv_ = LinearLayer<Scalar>::create(store, base + ".cross.v", group("cross", layer), layer, w, w, stdv, rng);
      co_ = LinearLayer<Scalar>::create(store, base + ".cross.o", group("cross", layer), layer, w, w, residual_std, rng);
    }
    mlp_norm_ = LayerNormLayer<Scalar>::create(store, base + ".mlp.norm", group("mlp", layer), layer, w);
    fc1_ = LinearLayer<Scalar>::create(store, base + ".mlp.fc1", group("mlp", layer), layer, w, shape.mlp, stdv, rng);
    fc2_ = LinearLayer<Scalar>::create(store, base + ".mlp.fc2", group("mlp", layer), layer, shape.mlp, w, residual_std, rng);
  }

  Var<Scalar> forward(Tape<Scalar>& t, Var<Scalar> x, std::span<const double> positions, const Mask& self_mask,
                      const CrossContext<Scalar>* cross = nullptr, BlockTrace<Scalar>* trace = nullptr) const {
    {
      auto h = attn_norm_(t, x);
      auto q = rope(q_(t, h), positions, shape_.heads, shape_.rope_base);
      auto k = rope(k_(t, h), positions, shape_.heads, shape_.rope_base);
      auto v = v_(t, h);
      auto a = attention(q, k, v, shape_.heads, self_mask, trace != nullptr ? &trace->self_scores : nullptr);
      x = x + o_(t, a);
    }
    if (shape_.cross_attention) {
      if (cross == nullptr) throw Error("cross-attention block called without context");
      auto h = cross_norm_(t, x);
      auto a = attention(cq_(t, h), ck_(t, cross->states), cv_(t, cross->states), shape_.heads, *cross->mask);
      x = x + co_(t, a);
    }
    auto h = mlp_norm_(t, x);
    return x + fc2_(t, gelu(fc1_(t, h)));
  }

  const BlockShape& shape() const { return shape_; }

 private:
  BlockShape shape_;
  LayerNormLayer<Scalar> attn_norm_, cross_norm_, mlp_norm_;
  LinearLayer<Scalar> q_, k_, v_, o_, cq_, ck_, cv_, co_, fc1_, fc2_;
};

template <typename Scalar>
struct StackTrace {
  std::vector<Var<Scalar>> layer_outputs;
  std::vector<BlockTrace<Scalar>> blocks;
};

/// A stack of blocks with an optional final normalization.
template <typename Scalar>
class TransformerStack {
 public:
  TransformerStack(ParamStore<Scalar>& store, const std::string& prefix, int layers, const BlockShape& shape,
                   const GroupNamer& group, const std::string& final_norm_group, std::mt19937_64& rng)
      : shape_(shape) {
    const double residual_std = 0.02 / std::sqrt(2.0 * std::max(layers, 1));
    blocks_.reserve(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) blocks_.emplace_back(store, prefix, l, shape, group, residual_std, rng);
    if (!final_norm_group.empty()) {
      final_norm_ = LayerNormLayer<Scalar>::create(store, prefix + ".final_norm", final_norm_group, -1, shape.width);
      has_final_norm_ = true;
    }
  }

  /// Runs every block; the final norm (if any) is applied to the returned
  /// value but not to the per-layer outputs recorded in `trace`.
  Var<Scalar> forward(Tape<Scalar>& t, Var<Scalar> x, std::span<const double> positions, const Mask& self_mask,
                      const CrossContext<Scalar>* cross = nullptr, StackTrace<Scalar>* trace = nullptr) const {
    if (trace != nullptr) {
      trace->layer_outputs.clear();
      trace->blocks.assign(blocks_.size(), BlockTrace<Scalar>{});
    }
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      x = blocks_[l].forward(t, x, positions, self_mask, cross, trace != nullptr ? &trace->blocks[l] : nullptr);
      if (trace != nullptr) trace->layer_outputs.push_back(x);
    }
    if (has_final_norm_) x = final_norm_(t, x);
    return x;
  }

  int layers() const { return static_cast<int>(blocks_.size()); }
  const BlockShape& shape() const { return shape_; }

 private:
  BlockShape shape_;
  std::vector<TransformerBlock<Scalar>> blocks_;
  LayerNormLayer<Scalar> final_norm_;
  bool has_final_norm_ = false;
};

inline std::vector<double> iota_positions(Eigen::Index n, double offset = 0.0) {
  std::vector<double> p(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = offset + static_cast<double>(i);
  return p;
}

}  // namespace bytekaz
