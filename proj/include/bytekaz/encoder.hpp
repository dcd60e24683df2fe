#pragma once

// Byte-side input adapter: byte embedding, local causal encoder, per-patch
// cross-attention pooling, and the affine projections into and out of the
// body's width.

#include "bytekaz/config.hpp"
#include "bytekaz/nn.hpp"
#include "bytekaz/patcher.hpp"

namespace bytekaz {

inline constexpr const char* kByteEmbeddingGroup = "adapter.byte_embedding";
inline constexpr const char* kEncoderGroup = "adapter.encoder";
inline constexpr const char* kEncProjGroup = "adapter.enc_proj";
inline constexpr const char* kDecProjGroup = "adapter.dec_proj";
inline constexpr const char* kDecoderGroup = "adapter.decoder";

/// Entries i.i.d. N(0, variance / local_width), shape local_width x body_width
/// (the row-vector convention y = p W + b).
Matrix<double> init_encoder_projection(double body_embedding_variance, int local_width, int body_width, std::uint64_t seed);

/// Affine map followed by LayerNorm. Used in both directions between the
/// local width and the body width.
template <typename Scalar>
class Projection {
 public:
  Projection(ParamStore<Scalar>& store, const std::string& name, const std::string& group, int in, int out, std::mt19937_64& rng)
      : in_(in), out_(out) {
    affine_ = LinearLayer<Scalar>::create(store, name, group, -1, in, out, 0.02, rng);
    norm_ = LayerNormLayer<Scalar>::create(store, name + ".norm", group, -1, out);
  }

  Var<Scalar> operator()(Tape<Scalar>& t, const Var<Scalar>& x) const {
    if (x.cols() != in_) throw Error("projection: expected input width " + std::to_string(in_) + ", got " + std::to_string(x.cols()));
    auto y = affine_(t, x);
    return normalize_ ? norm_(t, y) : y;
  }

  /// Disables the trailing LayerNorm; tests use this to see the raw affine map.
  void set_normalize(bool on) { normalize_ = on; }

  Parameter<Scalar>& weight() const { return *affine_.weight; }
  Parameter<Scalar>& bias() const { return *affine_.bias; }
  Parameter<Scalar>& norm_gain() const { return *norm_.gain; }
  Parameter<Scalar>& norm_shift() const { return *norm_.shift; }
  int in_width() const { return in_; }
  int out_width() const { return out_; }

 private:
  int in_;
  int out_;
  LinearLayer<Scalar> affine_;
  LayerNormLayer<Scalar> norm_;
  bool normalize_ = true;
};

/// Causal byte transformer plus single-query cross-attention pooling. The
/// pooling query is one learned vector shared by every patch.
template <typename Scalar>
class LocalEncoder {
 public:
  LocalEncoder(ParamStore<Scalar>& store, const LocalConfig& cfg, Parameter<Scalar>& byte_embedding, std::mt19937_64& rng)
      : cfg_(cfg),
        byte_embedding_(&byte_embedding),
        stack_(store, "encoder", cfg.encoder_layers, BlockShape{cfg.width, cfg.heads, cfg.mlp, cfg.rope_base, false},
               [](const std::string&, int) { return std::string(kEncoderGroup); }, "", rng),
        query_(&store.add("encoder.pool.query", kEncoderGroup, -1, 1, cfg.width)),
        key_(LinearLayer<Scalar>::create(store, "encoder.pool.k", kEncoderGroup, -1, cfg.width, cfg.width, 0.02, rng)),
        value_(LinearLayer<Scalar>::create(store, "encoder.pool.v", kEncoderGroup, -1, cfg.width, cfg.width, 0.02, rng)) {
    init_normal(*query_, 0.02, rng);
  }

  /// Per-byte hidden states (n x width); state i depends on bytes 0..i.
  Var<Scalar> encode_bytes(Tape<Scalar>& t, ByteView bytes) const {
    if (bytes.empty()) throw Error("encode_bytes: empty input");
    std::vector<int> ids(bytes.begin(), bytes.end());
    auto x = embedding(t.param(*byte_embedding_), ids);
    const auto n = static_cast<Eigen::Index>(bytes.size());
    return stack_.forward(t, x, iota_positions(n), causal_mask(n));
  }

  /// Patch vectors (m x width): the shared query attends over exactly the
  /// byte states of each patch.
  Var<Scalar> pool_patches(Tape<Scalar>& t, const Var<Scalar>& states, const Patching& patching) const {
    if (patching.n != static_cast<std::size_t>(states.rows())) throw Error("pool_patches: patching does not tile the byte states");
    patching.validate();
    const auto m = static_cast<Eigen::Index>(patching.patch_count());
    Mask mask = Mask::Constant(m, states.rows(), false);
    for (std::size_t j = 0; j < patching.patch_count(); ++j)
      for (std::size_t i = patching.begin(j); i < patching.end(j); ++i) mask(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = true;
    auto q = repeat_rows(t.param(*query_), m);
    return attention(q, key_(t, states), value_(t, states), 1, mask);
  }

  Parameter<Scalar>& query() const { return *query_; }
  const LinearLayer<Scalar>& key() const { return key_; }
  const LinearLayer<Scalar>& value() const { return value_; }
  const LocalConfig& config() const { return cfg_; }

 private:
  LocalConfig cfg_;
  Parameter<Scalar>* byte_embedding_;
  TransformerStack<Scalar> stack_;
  Parameter<Scalar>* query_;
  LinearLayer<Scalar> key_;
  LinearLayer<Scalar> value_;
};

}  // namespace bytekaz
