#pragma once

// Full byte-path model: entropy patcher, encoder adapter, body, decoder
// adapter, and the token-level teacher that shares the body.

#include "bytekaz/body.hpp"
#include "bytekaz/decoder.hpp"
#include "bytekaz/encoder.hpp"
#include "bytekaz/patcher.hpp"

#include <memory>

namespace bytekaz {

template <typename Scalar>
struct ForwardResult {
  Var<Scalar> logits;       // n x 256, row i predicts byte i+1
  Var<Scalar> body_output;  // m x body width (after the body's final norm)
  StackTrace<Scalar> body_trace;
  std::vector<int> targets;  // per row; -1 for the unscored last row
};

/// Token LM used to pretrain the body (Stage 0) and as the alignment
/// teacher: token embedding -> body -> tied output head.
template <typename Scalar>
class TokenTeacher {
 public:
  TokenTeacher(ParamStore<Scalar>& store, int vocab, int width, const GlobalBody<Scalar>& body, std::mt19937_64& rng)
      : body_(&body), embedding_(&store.add("teacher.embedding", kTeacherEmbeddingGroup, -1, vocab, width)) {
    init_normal(*embedding_, 0.02, rng);
  }

  Var<Scalar> hidden(Tape<Scalar>& t, std::span<const int> ids, StackTrace<Scalar>* trace = nullptr) const {
    auto x = embedding(t.param(*embedding_), ids);
    return body_->forward(t, x, iota_positions(static_cast<Eigen::Index>(ids.size())), trace);
  }

  Var<Scalar> logits(Tape<Scalar>& t, std::span<const int> ids, StackTrace<Scalar>* trace = nullptr) const {
    return matmul_transposed(hidden(t, ids, trace), t.param(*embedding_));
  }

  /// Empirical variance of all embedding entries.
  double embedding_variance() const {
    const auto a = embedding_->value.template cast<double>().array();
    const double mean = a.mean();
    return (a - mean).square().mean();
  }

  Parameter<Scalar>& embedding_table() const { return *embedding_; }
  int vocab() const { return static_cast<int>(embedding_->value.rows()); }

 private:
  const GlobalBody<Scalar>* body_;
  Parameter<Scalar>* embedding_;
};

template <typename Scalar>
class ByteKazModel {
 public:
  explicit ByteKazModel(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    byte_embedding_ = &store_.add("byte_embedding", kByteEmbeddingGroup, -1, kByteVocab, cfg_.local.width);
    init_normal(*byte_embedding_, 0.02, rng);
    entropy_ = std::make_unique<EntropyLm<Scalar>>(store_, cfg_.entropy, rng);
    encoder_ = std::make_unique<LocalEncoder<Scalar>>(store_, cfg_.local, *byte_embedding_, rng);
    enc_proj_ = std::make_unique<Projection<Scalar>>(store_, "enc_proj", kEncProjGroup, cfg_.local.width, cfg_.body.width, rng);
    body_ = std::make_unique<GlobalBody<Scalar>>(store_, cfg_.body, rng);
    dec_proj_ = std::make_unique<Projection<Scalar>>(store_, "dec_proj", kDecProjGroup, cfg_.body.width, cfg_.local.width, rng);
    decoder_ = std::make_unique<LocalDecoder<Scalar>>(store_, cfg_.local, *byte_embedding_, rng);
    teacher_ = std::make_unique<TokenTeacher<Scalar>>(store_, std::max(cfg_.token_vocab, kByteVocab), cfg_.body.width, *body_, rng);
  }

  ByteKazModel(const ByteKazModel&) = delete;
  ByteKazModel& operator=(const ByteKazModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  void set_threshold(double threshold) { cfg_.patch.threshold = threshold; }
  void set_patch_config(const PatchConfig& p) { cfg_.patch = p; }

  ParamStore<Scalar>& params() { return store_; }
  const ParamStore<Scalar>& params() const { return store_; }
  Parameter<Scalar>& byte_embedding() const { return *byte_embedding_; }
  const EntropyLm<Scalar>& entropy_lm() const { return *entropy_; }
  const LocalEncoder<Scalar>& encoder() const { return *encoder_; }
  Projection<Scalar>& enc_proj() const { return *enc_proj_; }
  const GlobalBody<Scalar>& body() const { return *body_; }
  Projection<Scalar>& dec_proj() const { return *dec_proj_; }
  const LocalDecoder<Scalar>& decoder() const { return *decoder_; }
  const TokenTeacher<Scalar>& teacher() const { return *teacher_; }

  /// Patching of a (framed) byte sequence under the configured strategy and
  /// whether the byte after it would open a new patch.
  std::pair<Patching, bool> patch_with_next(ByteView bytes) const {
    const auto& pc = cfg_.patch;
    Patching p;
    bool opens = false;
    switch (pc.strategy) {
      case PatchStrategy::kEntropy: {
        auto h = entropy_->entropies_with_next(bytes);
        p = segment_entropy(std::span<const double>(h).first(bytes.size()), pc.threshold, pc.max_patch_len);
        opens = h.back() > pc.threshold;
        break;
      }
      case PatchStrategy::kFixedStride:
        p = segment_fixed(bytes.size(), pc.stride);
        opens = bytes.size() % static_cast<std::size_t>(pc.stride) == 0;
        break;
      case PatchStrategy::kWhitespace:
        p = segment_whitespace(bytes, pc.max_patch_len);
        opens = !bytes.empty() && is_ascii_space(bytes.back());
        break;
    }
    if (p.patch_count() == 0) return {p, true};
    if (pc.strategy != PatchStrategy::kFixedStride && pc.max_patch_len > 0 &&
        p.length(p.patch_count() - 1) >= static_cast<std::size_t>(pc.max_patch_len))
      opens = true;
    return {p, opens};
  }

  Patching patch(ByteView bytes) const { return patch_with_next(bytes).first; }

  /// Byte path: encode -> pool -> project -> body -> project -> decode.
  ForwardResult<Scalar> forward(Tape<Scalar>& t, ByteView bytes, const Patching& patching, bool next_opens_patch = false) const {
    ForwardResult<Scalar> r;
    auto states = encoder_->encode_bytes(t, bytes);
    auto pooled = encoder_->pool_patches(t, states, patching);
    auto body_in = (*enc_proj_)(t, pooled);
    r.body_output = body_->forward(t, body_in, iota_positions(body_in.rows()), &r.body_trace);
    auto contexts = (*dec_proj_)(t, r.body_output);
    r.logits = decoder_->decode_logits(t, bytes, contexts, patching, next_opens_patch);
    r.targets.assign(bytes.size(), -1);
    for (std::size_t i = 0; i + 1 < bytes.size(); ++i) r.targets[i] = bytes[i + 1];
    return r;
  }

  /// Copy with a different scalar type; values and trainable flags carry over.
  template <typename Other>
  std::unique_ptr<ByteKazModel<Other>> cast() const {
    auto out = std::make_unique<ByteKazModel<Other>>(cfg_);
    for (auto& p : out->params()) {
      const auto& src = store_.get(p->name);
      p->value = src.value.template cast<Other>();
      p->trainable = src.trainable;
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<Scalar> store_;
  Parameter<Scalar>* byte_embedding_ = nullptr;
  std::unique_ptr<EntropyLm<Scalar>> entropy_;
  std::unique_ptr<LocalEncoder<Scalar>> encoder_;
  std::unique_ptr<Projection<Scalar>> enc_proj_;
  std::unique_ptr<GlobalBody<Scalar>> body_;
  std::unique_ptr<Projection<Scalar>> dec_proj_;
  std::unique_ptr<LocalDecoder<Scalar>> decoder_;
  std::unique_ptr<TokenTeacher<Scalar>> teacher_;
};

}  // namespace bytekaz
