#pragma once

// Intrinsic metrics, multiple-choice likelihood scoring, fertility
// comparison, and byte generation.

#include "bytekaz/checkpoint.hpp"

#include <filesystem>
#include <optional>

namespace bytekaz {

/// Anything that assigns log-probabilities to the scoring units (bytes or
/// tokens) of a continuation given a prefix.
class Scorer {
 public:
  virtual ~Scorer() = default;
  /// Natural-log probability of each unit of `continuation`, in order.
  virtual std::vector<double> unit_logprobs(ByteView prefix, ByteView continuation) const = 0;
  virtual std::string tag() const = 0;
};

/// Byte path: units are bytes, input framed with BOS.
class ByteScorer : public Scorer {
 public:
  explicit ByteScorer(const ByteKazModel<float>& model) : model_(&model) {}
  std::vector<double> unit_logprobs(ByteView prefix, ByteView continuation) const override;
  std::string tag() const override { return "byte-path"; }

 private:
  const ByteKazModel<float>* model_;
};

/// Stage-0 teacher baseline: units are BPE tokens of the continuation,
/// tokenized separately from the (BOS-framed) prefix.
class TokenScorer : public Scorer {
 public:
  TokenScorer(const ByteKazModel<float>& model, const BpeVocab& vocab) : model_(&model), vocab_(&vocab) {}
  std::vector<double> unit_logprobs(ByteView prefix, ByteView continuation) const override;
  std::string tag() const override { return "token-teacher"; }

 private:
  const ByteKazModel<float>* model_;
  const BpeVocab* vocab_;
};

/// log-softmax of one logit row, computed in double.
std::vector<double> log_softmax(const RowVector<double>& logits);

/// Total bits over total bytes; every byte of every document scored once.
double bits_per_byte(const Scorer& scorer, std::span<const ByteSeq> corpus);

struct ByteEval {
  double bpb = 0.0;
  double mean_patch_size = 0.0;  // over BOS-framed documents
  double total_bits = 0.0;
  std::size_t total_bytes = 0;
};

/// Byte-path BPB and patch statistics in one pass. `patchings` (of the
/// framed documents) may be supplied to skip re-patching.
ByteEval evaluate_byte_model(const ByteKazModel<float>& model, std::span<const ByteSeq> corpus,
                             const std::vector<Patching>* patchings = nullptr);

// ------------------------------------------------------------ MC scoring

struct McItem {
  std::string prompt;
  std::vector<std::string> choices;
  int gold = 0;

  void validate() const;
};

struct McScore {
  std::vector<double> scores;  // mean log-prob per unit, per candidate
  int predicted = 0;
  int gold = 0;
};

/// Length-normalized candidate log-likelihoods; ties go to the lowest index.
McScore score_mc(const Scorer& scorer, const McItem& item);

struct McTask {
  std::string name;
  std::vector<McItem> items;
};

/// JSON lines {prompt, choices, gold}; errors name the file and line.
McTask load_mc_task(const std::filesystem::path& path);
McItem parse_mc_item(const std::string& line, const std::string& where);

struct TaskResult {
  std::string name;
  double accuracy = 0.0;
  std::vector<McScore> items;
};

struct EvalReport {
  std::string model_tag;
  std::string config_hash;
  std::vector<TaskResult> tasks;
  std::optional<double> bpb;
  std::optional<double> mean_patch_size;

  nlohmann::json to_json() const;
  std::string summary_table() const;
};

/// Scores every task (no generation) and BPB on `heldout` when non-empty.
EvalReport eval_suite(const Scorer& scorer, std::span<const McTask> tasks, std::span<const ByteSeq> heldout);

// ------------------------------------------------------------- fertility

struct FertilityRow {
  std::size_t bytes = 0;
  std::size_t tokens = 0;
  std::size_t patches = 0;
};

struct FertilityTable {
  std::vector<FertilityRow> rows;
  std::size_t skipped_empty = 0;
  FertilityRow total;

  double tokens_per_byte() const;
  double patches_per_byte() const;
  double ratio() const;  // tokens per patch
  nlohmann::json to_json() const;
};

/// `patchings[i]` must tile `corpus[i]` (the same bytes the BPE encodes).
FertilityTable compare_fertility(const BpeVocab& vocab, std::span<const Patching> patchings, std::span<const ByteSeq> corpus);

// ------------------------------------------------------------ generation

struct GenerateOptions {
  std::size_t max_bytes = 64;
  bool greedy = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// Draws an index from softmax(logits / T) by inverting the CDF at one
/// uniform(0,1) draw from `rng`.
int sample_index(const RowVector<double>& logits, double temperature, std::mt19937_64& rng);

/// Appends bytes one at a time. Patching is recomputed on the grown
/// sequence, but boundaries already emitted never move.
ByteSeq generate(const ByteKazModel<float>& model, ByteView prompt, const GenerateOptions& opt);

/// Greedy or sampled continuation from the token teacher.
std::vector<int> generate_tokens(const ByteKazModel<float>& model, std::span<const int> prompt_ids, const GenerateOptions& opt);

}  // namespace bytekaz
