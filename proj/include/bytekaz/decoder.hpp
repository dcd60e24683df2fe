#pragma once

// Local byte decoder. Byte i self-attends to bytes 0..i and cross-attends to
// [start; contexts], where context row k+1 holds the projected body output of
// patch k. The row predicting a byte of patch J may read the start row and
// the contexts of patches 0..J-1 only.

#include "bytekaz/encoder.hpp"

namespace bytekaz {

/// Visibility of [start; contexts] for each prediction row of an n-byte
/// sequence. Row i predicts byte i+1; the final row predicts the byte after
/// the sequence, which starts a new patch iff `next_opens_patch`.
Mask decoder_cross_mask(const Patching& patching, bool next_opens_patch);

/// Patch index of the byte each row predicts.
std::vector<int> decoder_target_patches(const Patching& patching, bool next_opens_patch);

template <typename Scalar>
class LocalDecoder {
 public:
  LocalDecoder(ParamStore<Scalar>& store, const LocalConfig& cfg, Parameter<Scalar>& byte_embedding, std::mt19937_64& rng)
      : cfg_(cfg),
        byte_embedding_(&byte_embedding),
        start_(&store.add("decoder.start_context", kDecoderGroup, -1, 1, cfg.width)),
        stack_(store, "decoder", cfg.decoder_layers, BlockShape{cfg.width, cfg.heads, cfg.mlp, cfg.rope_base, true},
               [](const std::string&, int) { return std::string(kDecoderGroup); }, cfg.decoder_final_norm ? kDecoderGroup : "", rng) {
    init_normal(*start_, 0.02, rng);
  }

  /// Next-byte logits (n x 256) under teacher forcing. The output head is
  /// the transposed byte embedding.
  Var<Scalar> decode_logits(Tape<Scalar>& t, ByteView bytes, const Var<Scalar>& contexts, const Patching& patching,
                            bool next_opens_patch = false) const {
    if (bytes.empty()) throw Error("decode_logits: empty input");
    if (patching.n != bytes.size()) throw Error("decode_logits: patching does not tile the input");
    patching.validate();
    if (static_cast<std::size_t>(contexts.rows()) != patching.patch_count())
      throw Error("decode_logits: expected " + std::to_string(patching.patch_count()) + " patch contexts, got " +
                  std::to_string(contexts.rows()));
    if (contexts.rows() > 0 && contexts.cols() != cfg_.width) throw Error("decode_logits: context width mismatch");

    std::vector<int> ids(bytes.begin(), bytes.end());
    auto table = t.param(*byte_embedding_);
    auto x = embedding(table, ids);
    const auto n = static_cast<Eigen::Index>(bytes.size());
    const Mask cross_mask = decoder_cross_mask(patching, next_opens_patch);
    CrossContext<Scalar> cross{contexts.rows() > 0 ? concat_rows(t.param(*start_), contexts) : t.param(*start_), &cross_mask};
    auto h = stack_.forward(t, x, iota_positions(n), causal_mask(n), &cross);
    return matmul_transposed(h, table);
  }

  Parameter<Scalar>& start_context() const { return *start_; }
  const LocalConfig& config() const { return cfg_; }

 private:
  LocalConfig cfg_;
  Parameter<Scalar>* byte_embedding_;
  Parameter<Scalar>* start_;
  TransformerStack<Scalar> stack_;
};

}  // namespace bytekaz
