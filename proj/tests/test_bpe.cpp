#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bytekaz/bpe.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace bytekaz;

namespace {

std::vector<ByteSeq> repeated(const std::string& s, int times) { return std::vector<ByteSeq>(static_cast<std::size_t>(times), to_bytes(s)); }

std::vector<ByteSeq> english_paragraphs(std::size_t limit) {
  std::ifstream in(std::string(BYTEKAZ_SOURCE_DIR) + "/data/fixtures/english.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<ByteSeq> out;
  std::size_t pos = 0;
  while (pos < text.size() && out.size() < limit) {
    auto next = text.find("\n\n", pos);
    if (next == std::string::npos) next = text.size();
    if (next > pos) out.push_back(to_bytes(text.substr(pos, next - pos)));
    pos = next + 2;
  }
  return out;
}

}  // namespace

TEST_CASE("single merge on a repeated character") {
  // one merge = vocab size 257; see decisions ledger for the 258 reading
  const auto corpus = repeated("aaaa", 1000);
  const auto v = train_bpe(corpus, 257);
  REQUIRE(v.size() == 257);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.merges()[0].left == 'a');
  CHECK(v.merges()[0].right == 'a');
  CHECK(v.token_bytes(256) == to_bytes("aa"));

  const auto spans = v.encode(to_bytes("aaaa"));
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].id == 256);
  CHECK(spans[1].id == 256);
  CHECK(spans[0].begin == 0);
  CHECK(spans[0].end == 2);
  CHECK(spans[1].end == 4);

  // the next merge on this corpus is (aa, aa)
  const auto v2 = train_bpe(corpus, 258);
  REQUIRE(v2.merges().size() == 2);
  CHECK(v2.token_bytes(257) == to_bytes("aaaa"));
}

TEST_CASE("target below the byte floor is an error") {
  const auto corpus = repeated("abc", 3);
  CHECK_THROWS_AS(train_bpe(corpus, 256), Error);
  CHECK_THROWS_AS(train_bpe(corpus, 10), Error);
  std::vector<ByteSeq> none;
  CHECK_THROWS_AS(train_bpe(none, 300), Error);
}

TEST_CASE("no pair occurs twice -> no merges") {
  ByteSeq all;
  for (int b = 33; b < 127; ++b) all.push_back(static_cast<Byte>(b));  // one piece, every pair distinct
  std::vector<ByteSeq> corpus{all};
  const auto v = train_bpe(corpus, 300);
  CHECK(v.size() == 256);
  CHECK(v.merges().empty());
}

TEST_CASE("encode edge cases") {
  BpeVocab v;
  CHECK(v.encode(ByteSeq{}).empty());
  const auto one = v.encode(ByteSeq{0x41});
  REQUIRE(one.size() == 1);
  CHECK(one[0].id == 0x41);
  CHECK(one[0].begin == 0);
  CHECK(one[0].end == 1);
  CHECK(v.decode(std::vector<int>{0x41}) == ByteSeq{0x41});
  CHECK_THROWS_AS(v.decode(std::vector<int>{999}), Error);
}

TEST_CASE("spans tile the input") {
  const auto v = train_bpe(english_paragraphs(300), 400);
  const auto text = to_bytes("The quick brown fox, said he, jumped over\n\nthe lazy dog.");
  const auto spans = v.encode(text);
  std::size_t at = 0;
  for (const auto& s : spans) {
    CHECK(s.begin == at);
    CHECK(s.end > s.begin);
    CHECK(ByteSeq(text.begin() + static_cast<std::ptrdiff_t>(s.begin), text.begin() + static_cast<std::ptrdiff_t>(s.end)) ==
          v.token_bytes(s.id));
    at = s.end;
  }
  CHECK(at == text.size());
}

TEST_CASE("round trip on random byte strings") {
  const auto v = train_bpe(english_paragraphs(300), 512);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 64), byte(0, 255), ascii(0, 1);
  for (int trial = 0; trial < 10000; ++trial) {
    ByteSeq s(static_cast<std::size_t>(len(rng)));
    const bool text_like = ascii(rng) == 1;
    for (auto& b : s) b = static_cast<Byte>(text_like ? "etaoin shrdlu\n"[byte(rng) % 14] : byte(rng));
    const auto ids = v.encode_ids(s);
    REQUIRE(v.decode(ids) == s);
  }
}

TEST_CASE("training is deterministic and compression is monotone in vocab size") {
  const auto corpus = english_paragraphs(400);
  const auto a = train_bpe(corpus, 600);
  const auto b = train_bpe(corpus, 600);
  CHECK(a.to_json() == b.to_json());

  ByteSeq sample;
  for (std::size_t i = 0; i < 50; ++i) sample.insert(sample.end(), corpus[i].begin(), corpus[i].end());
  std::size_t prev = sample.size() + 1;
  for (int size : {300, 500, 900}) {
    const auto n = train_bpe(corpus, size).encode(sample).size();
    CHECK(n < prev);
    prev = n;
  }
}

TEST_CASE("fertility") {
  BpeVocab bytes_only;
  std::vector<ByteSeq> singles{to_bytes("a"), to_bytes("Z"), to_bytes("!")};
  CHECK(fertility(bytes_only, singles) == doctest::Approx(1.0));

  BpeVocab v;
  const int th = v.add_merge('t', 'h');
  v.add_merge(th, 'e');
  const int an = v.add_merge('a', 'n');
  v.add_merge(an, 'd');
  std::vector<ByteSeq> whole{to_bytes("the"), to_bytes("and")};
  CHECK(fertility(v, whole) == doctest::Approx(1.0));
  std::vector<ByteSeq> mixed{to_bytes("the"), to_bytes("xyz")};
  CHECK(fertility(v, mixed) == doctest::Approx(2.0));

  std::vector<ByteSeq> empty;
  CHECK_THROWS_AS(fertility(v, empty), Error);
}

TEST_CASE("English fertility sanity band") {
  // informational: the band is loose on purpose (small vocab, small corpus)
  const auto v = train_bpe(english_paragraphs(100000), 2048);
  std::ifstream in(std::string(BYTEKAZ_SOURCE_DIR) + "/data/fixtures/english_words.txt");
  std::vector<ByteSeq> words;
  for (std::string w; in >> w;) words.push_back(to_bytes(w));
  REQUIRE(!words.empty());
  const double f = fertility(v, words);
  MESSAGE("English fertility at 2048 merges: " << f);
  CHECK(f >= 1.0);
  CHECK(f <= 2.0);
}

TEST_CASE("vocab serialization") {
  const auto v = train_bpe(english_paragraphs(200), 400);
  const auto path = std::filesystem::temp_directory_path() / "bytekaz_test_vocab.json";
  v.save(path);
  const auto w = BpeVocab::load(path);
  CHECK(w.size() == v.size());
  const auto text = to_bytes("serialization should not change the encoding");
  CHECK(w.encode_ids(text) == v.encode_ids(text));
  std::filesystem::remove(path);

  auto bad = v.to_json();
  bad["format_version"] = 99;
  CHECK_THROWS_AS(BpeVocab::from_json(bad), Error);
  CHECK_THROWS_AS(BpeVocab::from_json(nlohmann::json::object()), Error);
}

TEST_CASE("pretokenization keeps whitespace runs apart") {
  const auto pieces = pretokenize(to_bytes("ab  cd\x01" "e"));
  std::vector<std::pair<std::size_t, std::size_t>> want{{0, 2}, {2, 4}, {4, 6}, {6, 7}, {7, 8}};
  CHECK(pieces == want);
}
