#include "bytekaz/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>

namespace bytekaz {

namespace {

std::uint64_t pair_key(int left, int right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) | static_cast<std::uint32_t>(right);
}

bool is_control(Byte b) { return b < 0x20 && !is_ascii_space(b); }

std::string to_hex(const ByteSeq& bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (Byte b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

ByteSeq from_hex(const std::string& hex) {
  if (hex.size() % 2 != 0 || hex.empty()) throw Error("vocab: malformed hex byte string '" + hex + "'");
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error("vocab: malformed hex byte string '" + hex + "'");
  };
  ByteSeq out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Byte>(nibble(hex[2 * i]) * 16 + nibble(hex[2 * i + 1]));
  return out;
}

}  // namespace

BpeVocab::BpeVocab() {
  tokens_.reserve(kByteVocab);
  for (int b = 0; b < kByteVocab; ++b) {
    tokens_.push_back(ByteSeq{static_cast<Byte>(b)});
    id_of_[tokens_.back()] = b;
  }
}

int BpeVocab::add_merge(int left, int right) {
  const auto n = static_cast<int>(tokens_.size());
  if (left < 0 || right < 0 || left >= n || right >= n) throw Error("vocab: merge references unknown token");
  if (rank_.count(pair_key(left, right)) != 0) throw Error("vocab: duplicate merge rule");
  ByteSeq joined = tokens_[static_cast<std::size_t>(left)];
  const auto& r = tokens_[static_cast<std::size_t>(right)];
  joined.insert(joined.end(), r.begin(), r.end());
  int id = 0;
  if (auto it = id_of_.find(joined); it != id_of_.end()) {
    id = it->second;
  } else {
    id = n;
    id_of_[joined] = id;
    tokens_.push_back(std::move(joined));
  }
  rank_[pair_key(left, right)] = static_cast<int>(merges_.size());
  merges_.push_back({left, right, id});
  return id;
}

std::vector<std::pair<std::size_t, std::size_t>> pretokenize(ByteView text) {
  std::vector<std::pair<std::size_t, std::size_t>> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    if (is_control(text[i])) {
      ++i;
    } else if (is_ascii_space(text[i])) {
      while (i < text.size() && is_ascii_space(text[i])) ++i;
    } else {
      while (i < text.size() && !is_ascii_space(text[i]) && !is_control(text[i])) ++i;
    }
    pieces.emplace_back(start, i);
  }
  return pieces;
}

void BpeVocab::encode_piece(ByteView piece, std::size_t offset, std::vector<TokenSpan>& out) const {
  std::vector<TokenSpan> sym;
  sym.reserve(piece.size());
  for (std::size_t i = 0; i < piece.size(); ++i) sym.push_back({piece[i], offset + i, offset + i + 1});
  while (sym.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
      auto it = rank_.find(pair_key(sym[i].id, sym[i + 1].id));
      if (it != rank_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const auto& m = merges_[static_cast<std::size_t>(best_rank)];
    std::vector<TokenSpan> next;
    next.reserve(sym.size());
    for (std::size_t i = 0; i < sym.size(); ++i) {
      if (i + 1 < sym.size() && sym[i].id == m.left && sym[i + 1].id == m.right) {
        next.push_back({m.result, sym[i].begin, sym[i + 1].end});
        ++i;
      } else {
        next.push_back(sym[i]);
      }
    }
    sym = std::move(next);
  }
  out.insert(out.end(), sym.begin(), sym.end());
}

std::vector<TokenSpan> BpeVocab::encode(ByteView text) const {
  std::vector<TokenSpan> out;
  out.reserve(text.size() / 2 + 1);
  for (const auto& [b, e] : pretokenize(text)) encode_piece(text.subspan(b, e - b), b, out);
  return out;
}

std::vector<int> BpeVocab::encode_ids(ByteView text) const {
  std::vector<int> ids;
  for (const auto& s : encode(text)) ids.push_back(s.id);
  return ids;
}

ByteSeq BpeVocab::decode(std::span<const int> ids) const {
  ByteSeq out;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw Error("decode: token id out of range");
    const auto& t = tokens_[static_cast<std::size_t>(id)];
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

nlohmann::json BpeVocab::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& m : merges_) merges.push_back({to_hex(token_bytes(m.left)), to_hex(token_bytes(m.right))});
  return {{"format_version", kFormatVersion}, {"byte_encoding", "hex"}, {"merges", merges}};
}

BpeVocab BpeVocab::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("format_version") || !j.contains("merges")) throw Error("vocab: missing format_version or merges");
  if (j.at("format_version") != kFormatVersion) throw Error("vocab: unsupported format_version " + j.at("format_version").dump());
  BpeVocab v;
  std::size_t index = 0;
  for (const auto& m : j.at("merges")) {
    if (!m.is_array() || m.size() != 2 || !m[0].is_string() || !m[1].is_string())
      throw Error("vocab: merge " + std::to_string(index) + " must be [left, right]");
    auto l = v.id_of_.find(from_hex(m[0].get<std::string>()));
    auto r = v.id_of_.find(from_hex(m[1].get<std::string>()));
    if (l == v.id_of_.end() || r == v.id_of_.end()) throw Error("vocab: merge " + std::to_string(index) + " uses an undefined token");
    v.add_merge(l->second, r->second);
    ++index;
  }
  return v;
}

void BpeVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocab file " + path.string());
  out << to_json().dump() << "\n";
}

BpeVocab BpeVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read vocab file " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("vocab " + path.string() + ": " + e.what());
  }
}

namespace {

struct PairRank {
  std::int64_t count;
  int left;
  int right;
};

// Highest count first; among equal counts, lexicographically smallest
// (left bytes, right bytes).
struct PairOrder {
  const BpeVocab* vocab;
  bool operator()(const PairRank& a, const PairRank& b) const {
    if (a.count != b.count) return a.count > b.count;
    const auto& al = vocab->token_bytes(a.left);
    const auto& bl = vocab->token_bytes(b.left);
    if (al != bl) return al < bl;
    const auto& ar = vocab->token_bytes(a.right);
    const auto& br = vocab->token_bytes(b.right);
    if (ar != br) return ar < br;
    return std::pair(a.left, a.right) < std::pair(b.left, b.right);
  }
};

}  // namespace

BpeVocab train_bpe(std::span<const ByteSeq> corpus, int target_size) {
  if (corpus.empty()) throw Error("train_bpe: empty corpus");
  if (target_size < kByteVocab + 1) throw Error("train_bpe: target_size must be >= 257");

  std::map<ByteSeq, std::int64_t> piece_freq;
  for (const auto& doc : corpus) {
    for (const auto& [b, e] : pretokenize(doc)) {
      if (e - b < 2) continue;
      piece_freq[ByteSeq(doc.begin() + static_cast<std::ptrdiff_t>(b), doc.begin() + static_cast<std::ptrdiff_t>(e))]++;
    }
  }

  std::vector<std::vector<int>> words;
  std::vector<std::int64_t> freq;
  for (const auto& [piece, f] : piece_freq) {
    words.emplace_back(piece.begin(), piece.end());
    freq.push_back(f);
  }

  BpeVocab vocab;
  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<int>> where;
  std::set<PairRank, PairOrder> queue(PairOrder{&vocab});

  auto adjust = [&](int l, int r, std::int64_t delta) {
    const auto key = pair_key(l, r);
    auto& c = counts[key];
    if (c > 0) queue.erase(PairRank{c, l, r});
    c += delta;
    if (c > 0) queue.insert(PairRank{c, l, r});
  };

  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto& s = words[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      adjust(s[i], s[i + 1], freq[w]);
      where[pair_key(s[i], s[i + 1])].push_back(static_cast<int>(w));
    }
  }

  while (static_cast<int>(vocab.size()) < target_size && !queue.empty()) {
    const PairRank best = *queue.begin();
    if (best.count < 2) break;
    const int result = vocab.add_merge(best.left, best.right);
    const auto key = pair_key(best.left, best.right);

    std::vector<int> touched = std::move(where[key]);
    where.erase(key);
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

    for (int w : touched) {
      auto& s = words[static_cast<std::size_t>(w)];
      for (std::size_t i = 0; i + 1 < s.size(); ++i) adjust(s[i], s[i + 1], -freq[static_cast<std::size_t>(w)]);
      std::vector<int> merged;
      merged.reserve(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == best.left && s[i + 1] == best.right) {
          merged.push_back(result);
          ++i;
        } else {
          merged.push_back(s[i]);
        }
      }
      s = std::move(merged);
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        adjust(s[i], s[i + 1], freq[static_cast<std::size_t>(w)]);
        where[pair_key(s[i], s[i + 1])].push_back(w);
      }
    }
  }
  return vocab;
}

double fertility(const BpeVocab& vocab, std::span<const ByteSeq> words) {
  if (words.empty()) throw Error("fertility: empty word list");
  std::size_t total = 0;
  for (const auto& w : words) total += vocab.encode(w).size();
  return static_cast<double>(total) / static_cast<double>(words.size());
}

}  // namespace bytekaz
