#include "bytekaz/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace bytekaz {

CorpusFormat parse_corpus_format(const std::string& s) {
  if (s == "plain" || s == "text") return CorpusFormat::kPlainText;
  if (s == "jsonl") return CorpusFormat::kJsonLines;
  throw Error("unknown corpus format '" + s + "' (expected plain or jsonl)");
}

void CorpusSpec::validate() const {
  if (inputs.empty()) throw Error("corpus: no input paths");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error("corpus: train fraction must lie in (0, 1)");
  if (chunk_bytes < 2) throw Error("corpus: chunk length must be >= 2");
}

std::vector<ByteSeq> CorpusSplit::bytes_of(const std::vector<Document>& docs) {
  std::vector<ByteSeq> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(d.bytes);
  return out;
}

namespace {

// Length of the code point starting with `lead`, or 0 if `lead` cannot start one.
std::size_t sequence_length(Byte lead) {
  if (lead < 0x80) return 1;
  if (lead >= 0xC2 && lead <= 0xDF) return 2;
  if (lead >= 0xE0 && lead <= 0xEF) return 3;
  if (lead >= 0xF0 && lead <= 0xF4) return 4;
  return 0;
}

bool is_continuation(Byte b) { return (b & 0xC0) == 0x80; }

}  // namespace

bool valid_utf8(ByteView s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t len = sequence_length(s[i]);
    if (len == 0 || i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k)
      if (!is_continuation(s[i + k])) return false;
    const Byte a = s[i], b = len > 1 ? s[i + 1] : 0;
    if (a == 0xE0 && b < 0xA0) return false;  // overlong
    if (a == 0xED && b > 0x9F) return false;  // surrogates
    if (a == 0xF0 && b < 0x90) return false;  // overlong
    if (a == 0xF4 && b > 0x8F) return false;  // > U+10FFFF
    i += len;
  }
  return true;
}

std::vector<ByteSeq> chunk_utf8(ByteView bytes, std::size_t max_len) {
  if (max_len < 2) throw Error("chunk_utf8: chunk length must be >= 2");
  std::vector<ByteSeq> out;
  std::size_t i = 0;
  while (i < bytes.size()) {
    std::size_t end = std::min(i + max_len, bytes.size());
    while (end < bytes.size() && end > i && is_continuation(bytes[end])) --end;
    if (end == i) {  // a single code point wider than max_len
      end = i + 1;
      while (end < bytes.size() && is_continuation(bytes[end])) ++end;
    }
    out.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(i), bytes.begin() + static_cast<std::ptrdiff_t>(end));
    i = end;
  }
  return out;
}

std::vector<ByteSeq> read_documents(const std::filesystem::path& path, CorpusFormat format, const std::string& text_field) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("corpus: cannot read " + path.string());
  std::vector<ByteSeq> docs;
  std::string line;
  if (format == CorpusFormat::kJsonLines) {
    for (int no = 1; std::getline(in, line); ++no) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        // Invalid UTF-8 inside strings is checked by us, not the parser.
        j = nlohmann::json::parse(line, nullptr, true, false);
      } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ":" + std::to_string(no) + ": invalid JSON (" + e.what() + ")");
      }
      if (!j.is_object() || !j.contains(text_field) || !j[text_field].is_string())
        throw Error(path.string() + ":" + std::to_string(no) + ": missing string field '" + text_field + "'");
      docs.push_back(to_bytes(j[text_field].get_ref<const std::string&>()));
    }
    return docs;
  }
  std::string para;
  auto flush = [&] {
    if (!para.empty()) docs.push_back(to_bytes(para));
    para.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
      continue;
    }
    if (!para.empty()) para += '\n';
    para += line;
  }
  flush();
  return docs;
}

CorpusSplit ingest(const CorpusSpec& spec) {
  spec.validate();
  struct Raw {
    ByteSeq bytes;
    std::string source;
    std::size_t index;
  };
  CorpusSplit out;
  std::vector<Raw> docs;
  for (const auto& path : spec.inputs) {
    auto file_docs = read_documents(path, spec.format, spec.text_field);
    for (std::size_t i = 0; i < file_docs.size(); ++i) {
      if (file_docs[i].empty()) {
        ++out.report.dropped_empty;
      } else if (!valid_utf8(file_docs[i])) {
        ++out.report.dropped_invalid_utf8;
      } else {
        docs.push_back({std::move(file_docs[i]), path.string(), i});
      }
    }
  }
  if (docs.empty()) throw Error("corpus: zero valid documents");
  out.report.documents = docs.size();

  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(docs.size())));
  if (docs.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, docs.size() - 1);

  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& d = docs[order[r]];
    auto& dest = r < n_train ? out.train : out.val;
    for (auto& c : chunk_utf8(d.bytes, spec.chunk_bytes)) dest.push_back({std::move(c), d.source, d.index});
  }
  out.report.train_chunks = out.train.size();
  out.report.val_chunks = out.val.size();
  return out;
}

}  // namespace bytekaz
