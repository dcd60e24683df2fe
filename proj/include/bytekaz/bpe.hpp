#pragma once

#include "bytekaz/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <span>
#include <unordered_map>
#include <vector>

namespace bytekaz {

/// One encoded token and the half-open byte range it covers.
struct TokenSpan {
  int id = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Byte-level BPE vocabulary. Ids 0..255 are the single bytes, so every byte
/// string is encodable. Merges are applied in rank order.
class BpeVocab {
 public:
  static constexpr int kFormatVersion = 1;

  struct Merge {
    int left = 0;
    int right = 0;
    int result = 0;
  };

  BpeVocab();

  std::size_t size() const { return tokens_.size(); }
  const ByteSeq& token_bytes(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<Merge>& merges() const { return merges_; }

  /// Appends a merge rule; reuses an existing id when the concatenation is
  /// already a token. Returns the resulting id.
  int add_merge(int left, int right);

  std::vector<TokenSpan> encode(ByteView text) const;
  std::vector<int> encode_ids(ByteView text) const;
  ByteSeq decode(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static BpeVocab from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static BpeVocab load(const std::filesystem::path& path);

 private:
  void encode_piece(ByteView piece, std::size_t offset, std::vector<TokenSpan>& out) const;

  std::vector<ByteSeq> tokens_;
  std::vector<Merge> merges_;
  std::unordered_map<std::uint64_t, int> rank_;  // (left, right) -> merge index
  std::map<ByteSeq, int> id_of_;
};

/// Splits text into pretokenization pieces: maximal runs of ASCII
/// whitespace, maximal runs of other bytes, and ASCII control bytes alone.
std::vector<std::pair<std::size_t, std::size_t>> pretokenize(ByteView text);

/// Greedy most-frequent-pair BPE over whitespace-pretokenized pieces. Ties
/// go to the lexicographically smallest (left bytes, right bytes). Pairs
/// must occur at least twice to merge.
BpeVocab train_bpe(std::span<const ByteSeq> corpus, int target_size);

/// Mean tokens per word.
double fertility(const BpeVocab& vocab, std::span<const ByteSeq> words);

}  // namespace bytekaz
