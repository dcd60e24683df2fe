#pragma once

// Corpus ingestion: UTF-8 validation, code-point-safe chunking, and a
// seed-determined train/validation split.

#include "bytekaz/types.hpp"

#include <filesystem>
#include <vector>

namespace bytekaz {

enum class CorpusFormat { kPlainText, kJsonLines };

CorpusFormat parse_corpus_format(const std::string& s);

struct CorpusSpec {
  std::vector<std::filesystem::path> inputs;
  CorpusFormat format = CorpusFormat::kPlainText;
  std::string text_field = "text";  // JSON-lines only
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
  std::size_t chunk_bytes = 1024;

  void validate() const;
};

struct IngestReport {
  std::size_t documents = 0;       // valid documents kept
  std::size_t dropped_invalid_utf8 = 0;
  std::size_t dropped_empty = 0;
  std::size_t train_chunks = 0;
  std::size_t val_chunks = 0;
};

struct CorpusSplit {
  std::vector<Document> train;  // chunks, in delivery order
  std::vector<Document> val;
  IngestReport report;

  static std::vector<ByteSeq> bytes_of(const std::vector<Document>& docs);
};

bool valid_utf8(ByteView bytes);

/// Splits into chunks of at most `max_len` bytes without cutting a UTF-8
/// code point. A code point longer than `max_len` becomes its own chunk.
std::vector<ByteSeq> chunk_utf8(ByteView bytes, std::size_t max_len);

/// Documents of one file: blank-line separated paragraphs (plain text) or
/// one JSON object per line. Line breaks inside a paragraph are kept.
std::vector<ByteSeq> read_documents(const std::filesystem::path& path, CorpusFormat format, const std::string& text_field);

/// Whole documents are assigned to train or val by a seeded shuffle, then
/// chunked; invalid-UTF-8 documents are dropped and counted.
CorpusSplit ingest(const CorpusSpec& spec);

}  // namespace bytekaz
