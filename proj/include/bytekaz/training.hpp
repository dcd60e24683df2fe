#pragma once

// Stage controllers (Stage 0 teacher pretraining, entropy LM, Stage A, Stage
// B), their losses, the optimizer, and finite-difference gradient checks.

#include "bytekaz/checkpoint.hpp"

#include <functional>
#include <optional>
#include <ostream>

namespace bytekaz {

// ---------------------------------------------------------------- losses

/// Mean next-byte NLL (nats/byte). `targets[i]` is the byte row i predicts;
/// rows past the end of `targets` are unscored. One row per target or one
/// extra trailing row (the usual teacher-forcing shift) is accepted.
template <typename Scalar>
Var<Scalar> loss_byte_ce(const Var<Scalar>& logits, ByteView targets) {
  const auto n = static_cast<std::size_t>(logits.rows());
  if (targets.size() != n && targets.size() + 1 != n)
    throw Error("loss_byte_ce: " + std::to_string(n) + " logit rows for " + std::to_string(targets.size()) + " targets");
  std::vector<int> tg(n, -1);
  for (std::size_t i = 0; i < targets.size(); ++i) tg[i] = targets[i];
  return cross_entropy(logits, tg);
}

/// alpha * sum over layers of MSE(student, teacher). Teacher states are
/// plain matrices, so no gradient can reach whatever produced them.
template <typename Scalar>
Var<Scalar> loss_alignment(Tape<Scalar>& t, std::span<const Var<Scalar>> student, std::span<const Matrix<Scalar>> teacher, double alpha) {
  if (student.size() != teacher.size()) throw Error("loss_alignment: layer count mismatch");
  if (alpha < 0.0) throw Error("loss_alignment: alpha must be >= 0");
  for (std::size_t l = 0; l < student.size(); ++l)
    if (student[l].rows() != teacher[l].rows() || student[l].cols() != teacher[l].cols())
      throw Error("loss_alignment: shape mismatch at layer slot " + std::to_string(l));
  Matrix<Scalar> zero = Matrix<Scalar>::Zero(1, 1);
  if (alpha == 0.0 || student.empty()) return t.constant(zero);
  Var<Scalar> total = mse(student[0], teacher[0]);
  for (std::size_t l = 1; l < student.size(); ++l) total = total + mse(student[l], teacher[l]);
  return scale(total, static_cast<Scalar>(alpha));
}

/// Averages token states onto patches, weighting each token by the number of
/// bytes it shares with the patch. Spans and patching index the same bytes.
template <typename Scalar>
Matrix<Scalar> pool_to_patches(const Matrix<Scalar>& token_states, std::span<const TokenSpan> spans, const Patching& patching) {
  if (static_cast<std::size_t>(token_states.rows()) != spans.size()) throw Error("pool_to_patches: one state per token required");
  Matrix<Scalar> out = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(patching.patch_count()), token_states.cols());
  std::size_t tok = 0;
  for (std::size_t j = 0; j < patching.patch_count(); ++j) {
    const std::size_t b = patching.begin(j), e = patching.end(j);
    while (tok < spans.size() && spans[tok].end <= b) ++tok;
    std::size_t covered = 0;
    for (std::size_t k = tok; k < spans.size() && spans[k].begin < e; ++k) {
      const std::size_t overlap = std::min(e, spans[k].end) - std::max(b, spans[k].begin);
      out.row(static_cast<Eigen::Index>(j)) += token_states.row(static_cast<Eigen::Index>(k)) * static_cast<Scalar>(overlap);
      covered += overlap;
    }
    if (covered == 0) throw Error("pool_to_patches: patch " + std::to_string(j) + " overlaps no token");
    out.row(static_cast<Eigen::Index>(j)) /= static_cast<Scalar>(covered);
  }
  return out;
}

/// Teacher hidden states at `layers`, pooled to the patches of `framed`.
/// Runs on a tape with gradients disabled (stop-gradient).
template <typename Scalar>
std::vector<Matrix<Scalar>> teacher_pooled_states(const ByteKazModel<Scalar>& model, const BpeVocab& vocab, ByteView framed,
                                                  const Patching& patching, std::span<const int> layers) {
  if (patching.n != framed.size()) throw Error("teacher_pooled_states: patching does not tile the text");
  const auto spans = vocab.encode(framed);
  std::vector<int> ids;
  ids.reserve(spans.size());
  for (const auto& s : spans) {
    if (s.id >= model.teacher().vocab()) throw Error("teacher_pooled_states: token id outside teacher vocabulary");
    ids.push_back(s.id);
  }
  Tape<Scalar> t;
  t.set_grad_enabled(false);
  StackTrace<Scalar> trace;
  model.teacher().hidden(t, ids, &trace);
  std::vector<Matrix<Scalar>> out;
  for (int l : layers) {
    if (l < 0 || l >= static_cast<int>(trace.layer_outputs.size())) throw Error("teacher_pooled_states: layer " + std::to_string(l) + " out of range");
    out.push_back(pool_to_patches<Scalar>(trace.layer_outputs[static_cast<std::size_t>(l)].value(), spans, patching));
  }
  return out;
}

// ------------------------------------------------------------- optimizer

/// Linear warmup over `warmup` steps, then cosine decay to
/// base * min_ratio at `total` steps.
double scheduled_learning_rate(double base, int step, int warmup, int total, double min_ratio);

/// Global-norm gradient clipping over trainable parameters; returns the
/// pre-clip norm. max_norm <= 0 disables clipping.
double clip_gradients(ParamStore<float>& store, double max_norm);

/// One decoupled-weight-decay Adam update of every trainable parameter that
/// holds a gradient. Decay applies to matrices only (not biases/norms).
void adamw_step(ParamStore<float>& store, OptimizerState& state, double lr, double weight_decay, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

// ---------------------------------------------------------- LM training

/// Shared settings for the two auxiliary LMs (teacher body, entropy LM).
struct LmTrainConfig {
  int steps = 300;
  int batch_size = 8;
  int seq_len = 128;  // units per training window
  double learning_rate = 3e-3;
  int warmup_steps = 20;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  int eval_interval = 50;
  int eval_windows = 16;
};

struct LmTrainReport {
  double initial_heldout_loss = 0.0;  // nats per unit
  double final_heldout_loss = 0.0;
  std::vector<nlohmann::json> log;
};

/// Stage 0: trains the body and the token embedding (tied head) as a BPE
/// token LM. Marks body and teacher groups as loaded; tags stage "0".
LmTrainReport pretrain_body_stage0(Checkpoint& ckpt, const BpeVocab& vocab, std::span<const ByteSeq> train,
                                   std::span<const ByteSeq> heldout, const LmTrainConfig& cfg, std::ostream* log = nullptr);

/// Trains the entropy LM on bytes. Marks the entropy group as loaded.
LmTrainReport train_entropy_lm(Checkpoint& ckpt, std::span<const ByteSeq> train, std::span<const ByteSeq> heldout,
                               const LmTrainConfig& cfg, std::ostream* log = nullptr);

// ------------------------------------------------------------ Stage A/B

/// Re-initializes every adapter group from `seed`, then sets W_enc per the
/// teacher's embedding variance and the encoder-projection LayerNorm gain to
/// the teacher embedding standard deviation.
void init_adapter(Checkpoint& ckpt, std::uint64_t seed);

struct StageMetrics {
  int step = 0;
  std::optional<double> ce_nats_per_byte;  // training CE since the previous record
  std::optional<double> align_loss;
  double bpb_heldout = 0.0;
  double mean_patch_size = 0.0;

  nlohmann::json to_json() const;
};

struct StageReport {
  std::vector<StageMetrics> log;
  std::map<std::string, std::uint64_t> hashes_before;
  std::map<std::string, std::uint64_t> hashes_after;
  ParamPartition partition;
};

/// Runs Stage A or B in place on `ckpt`. Stage A needs a Stage-0 (or
/// Stage-A) checkpoint; Stage B needs a Stage-A (or Stage-B) checkpoint.
/// One JSON line per eval record is written to `metrics` when given.
StageReport run_stage(Checkpoint& ckpt, const TrainConfig& cfg, std::span<const ByteSeq> train, std::span<const ByteSeq> heldout,
                      std::ostream* metrics = nullptr);

// ------------------------------------------------------------- gradcheck

enum class GradcheckTarget { kProjection, kEncoderPooling, kProjections, kBodyAttention, kDecoderCrossAttention, kAlignment, kFullStack };

std::string to_string(GradcheckTarget t);
GradcheckTarget parse_gradcheck_target(const std::string& s);
std::vector<GradcheckTarget> all_gradcheck_targets();

struct GradcheckReport {
  std::string target;
  std::map<std::string, double> group_errors;  // norm-wise relative error per group
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::vector<std::string> frozen_with_grad;  // must stay empty
  double tolerance = 0.0;

  bool passed() const { return frozen_with_grad.empty() && max_rel_error < tolerance; }
  nlohmann::json to_json() const;
};

/// Central differences (float64) against the tape's analytic gradients for
/// the parameters `target` selects; every other parameter is frozen and
/// must receive no gradient. `input_bytes` counts the framed input.
GradcheckReport gradcheck(GradcheckTarget target, double tolerance, std::uint64_t seed = 7, std::size_t input_bytes = 12);

}  // namespace bytekaz
