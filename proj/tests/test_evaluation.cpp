#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bytekaz/evaluation.hpp"
#include "tiny_model.hpp"

#include <filesystem>
#include <fstream>

using namespace bytekaz;
using namespace bytekaz::testing;

namespace {

// Assigns each byte a fixed probability from a table, ignoring context.
class TableScorer : public Scorer {
 public:
  explicit TableScorer(std::function<double(Byte prev, Byte next)> p) : p_(std::move(p)) {}
  std::vector<double> unit_logprobs(ByteView prefix, ByteView continuation) const override {
    std::vector<double> out;
    Byte prev = prefix.empty() ? kBosByte : prefix.back();
    for (Byte b : continuation) {
      out.push_back(std::log(p_(prev, b)));
      prev = b;
    }
    return out;
  }
  std::string tag() const override { return "table"; }

 private:
  std::function<double(Byte, Byte)> p_;
};

// Two-symbol bigram model over {'a', 'b'}.
double bigram(Byte prev, Byte next) {
  const double pa = prev == 'a' ? 0.7 : prev == 'b' ? 0.4 : 0.5;
  if (next == 'a') return pa;
  if (next == 'b') return 1.0 - pa;
  return 1e-300;
}

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("bits per byte") {
  const std::vector<ByteSeq> docs{to_bytes("abc"), to_bytes("hello!")};
  TableScorer uniform([](Byte, Byte) { return 1.0 / 256; });
  CHECK(bits_per_byte(uniform, docs) == doctest::Approx(8.0).epsilon(1e-12));
  TableScorer certain([](Byte, Byte) { return 1.0; });
  CHECK(bits_per_byte(certain, docs) == 0.0);

  const std::vector<ByteSeq> ab{to_bytes("ab"), to_bytes("bba")};
  // doc 1: p(a|BOS)=.5, p(b|a)=.3; doc 2: p(b|BOS)=.5, p(b|b)=.6, p(a|b)=.4
  const double bits = -(std::log2(0.5) + std::log2(0.3)) - (std::log2(0.5) + std::log2(0.6) + std::log2(0.4));
  TableScorer bi(bigram);
  CHECK(bits_per_byte(bi, ab) == doctest::Approx(bits / 5.0).epsilon(1e-12));

  std::vector<ByteSeq> empty;
  CHECK_THROWS_AS(bits_per_byte(uniform, empty), Error);
  std::vector<ByteSeq> blank{ByteSeq{}};
  CHECK_THROWS_AS(bits_per_byte(uniform, blank), Error);
}

TEST_CASE("byte model BPB: uniform model and additivity") {
  ByteKazModel<float> m(tiny_config(), 2);
  perturb_all(m.params(), 0.3, 3);
  m.byte_embedding().value.setZero();  // tied head -> all-zero logits
  const std::vector<ByteSeq> docs{to_bytes("uniform"), to_bytes("model")};
  const auto ev = evaluate_byte_model(m, docs);
  CHECK(ev.bpb == doctest::Approx(8.0).epsilon(1e-6));
  CHECK(ev.total_bytes == 12);

  ByteKazModel<float> r(tiny_config(), 4);
  perturb_all(r.params(), 0.5, 5);
  ByteScorer s(r);
  const std::vector<ByteSeq> d1{docs[0]}, d2{docs[1]};
  const double joint = bits_per_byte(s, docs);
  const double weighted = (bits_per_byte(s, d1) * 7 + bits_per_byte(s, d2) * 5) / 12;
  CHECK(joint == doctest::Approx(weighted).epsilon(1e-12));
  CHECK(evaluate_byte_model(r, docs).bpb == doctest::Approx(joint).epsilon(1e-9));
  CHECK(evaluate_byte_model(r, docs).mean_patch_size == doctest::Approx(14.0 / 5.0));
}

TEST_CASE("score_mc on a hand-computable model") {
  TableScorer bi(bigram);
  McItem item{"a", {"ab", "aa", "bab"}, 1};
  const auto s = score_mc(bi, item);
  const double want0 = (std::log(0.7) + std::log(0.3)) / 2;
  const double want1 = (std::log(0.7) + std::log(0.7)) / 2;
  const double want2 = (std::log(0.3) + std::log(0.4) + std::log(0.3)) / 3;
  CHECK(std::abs(s.scores[0] - want0) < 1e-9);
  CHECK(std::abs(s.scores[1] - want1) < 1e-9);
  CHECK(std::abs(s.scores[2] - want2) < 1e-9);
  CHECK(s.predicted == 1);
  CHECK(s.gold == 1);

  // permuting candidates permutes scores
  McItem perm{"a", {"bab", "ab", "aa"}, 2};
  const auto sp = score_mc(bi, perm);
  CHECK(sp.scores[0] == s.scores[2]);
  CHECK(sp.scores[1] == s.scores[0]);
  CHECK(sp.predicted == 2);

  McItem empty_choice{"a", {"ab", ""}, 0};
  CHECK_THROWS_AS(score_mc(bi, empty_choice), Error);
  McItem one{"a", {"ab"}, 0};
  CHECK_THROWS_AS(score_mc(bi, one), Error);
  McItem gold_oob{"a", {"ab", "b"}, 2};
  CHECK_THROWS_AS(score_mc(bi, gold_oob), Error);
}

TEST_CASE("score_mc with the byte model") {
  ByteKazModel<float> m(tiny_config(), 6);
  perturb_all(m.params(), 0.8, 7);
  ByteScorer s(m);

  McItem same{"prompt ", {"xyz", "xyz"}, 1};
  const auto st = score_mc(s, same);
  CHECK(st.scores[0] == st.scores[1]);
  CHECK(st.predicted == 0);

  GenerateOptions g;
  g.max_bytes = 6;
  const auto prompt = to_bytes("The ");
  const auto greedy = generate(m, prompt, g);
  std::mt19937_64 rng(8);
  auto noise = random_bytes(6, rng);
  McItem pick{"The ", {to_string(noise), to_string(greedy)}, 1};
  const auto sp = score_mc(s, pick);
  CHECK(sp.scores[1] > sp.scores[0]);
  CHECK(sp.predicted == 1);
}

TEST_CASE("random model on a balanced 400-item fixture") {
  ByteKazModel<float> m(tiny_config(), 10);
  perturb_all(m.params(), 0.5, 11);
  ByteScorer s(m);
  std::mt19937_64 rng(12);
  McTask task{"random", {}};
  for (int i = 0; i < 400; ++i) {
    McItem it;
    it.prompt = to_string(random_bytes(6, rng));
    for (int c = 0; c < 4; ++c) it.choices.push_back(to_string(random_bytes(1 + rng() % 5, rng)));
    it.gold = i % 4;
    task.items.push_back(it);
  }
  const std::vector<McTask> tasks{task};
  const auto rep = eval_suite(s, tasks, {});
  MESSAGE("random-model accuracy " << rep.tasks[0].accuracy);
  CHECK(rep.tasks[0].accuracy >= 0.17);
  CHECK(rep.tasks[0].accuracy <= 0.33);
  CHECK_FALSE(rep.bpb.has_value());
}

TEST_CASE("eval_suite") {
  // forced-correct: the scorer loves the byte 'y'
  TableScorer yes([](Byte, Byte b) { return b == 'y' ? 0.9 : 0.001; });
  const std::vector<McTask> tasks{{"one", {McItem{"q?", {"no", "yy"}, 1}}}};
  const std::vector<ByteSeq> held{to_bytes("yyy")};
  const auto rep = eval_suite(yes, tasks, held);
  CHECK(rep.tasks[0].accuracy == 1.0);
  REQUIRE(rep.bpb.has_value());
  CHECK(*rep.bpb == doctest::Approx(-std::log2(0.9)));

  const auto bpb_only = eval_suite(yes, std::span<const McTask>{}, held);
  CHECK(bpb_only.tasks.empty());
  CHECK(bpb_only.bpb.has_value());
  const auto j = rep.to_json();
  CHECK(j.at("tasks")[0].at("accuracy") == 1.0);
  CHECK(rep.summary_table().find("one") != std::string::npos);
}

TEST_CASE("task files") {
  const auto good = write_temp("bk_good.jsonl", "{\"prompt\":\"p\",\"choices\":[\"a\",\"b\"],\"gold\":1}\n\n{\"prompt\":\"q\",\"choices\":[\"c\",\"d\",\"e\"],\"gold\":0}\n");
  const auto t = load_mc_task(good);
  CHECK(t.name == "bk_good");
  CHECK(t.items.size() == 2);
  CHECK(t.items[1].choices.size() == 3);

  auto fails_at = [](const std::string& body, const std::string& needle) {
    const auto p = write_temp("bk_bad.jsonl", body);
    CHECK_THROWS_WITH_AS(load_mc_task(p), doctest::Contains(needle.c_str()), Error);
  };
  fails_at("{\"prompt\":\"p\",\"choices\":[\"a\",\"b\"],\"gold\":0}\n{broken\n", "bk_bad.jsonl:2");
  fails_at("{\"prompt\":\"p\",\"choices\":[\"a\",\"b\"],\"gold\":3}\n", "gold");
  fails_at("{\"prompt\":\"p\",\"choices\":[\"a\",\"b\"],\"gold\":0,\"extra\":1}\n", "unknown field");
  fails_at("{\"prompt\":\"p\",\"choices\":[\"a\"],\"gold\":0}\n", "two choices");
  fails_at("{\"prompt\":\"p\",\"choices\":[\"a\",\"\"],\"gold\":0}\n", "empty");
  fails_at("\n", "no items");
  CHECK_THROWS_AS(load_mc_task("/nonexistent/task.jsonl"), Error);
}

TEST_CASE("token scorer units are BPE tokens") {
  ModelConfig cfg = tiny_config();
  BpeVocab v;
  v.add_merge('a', 'b');
  cfg.token_vocab = static_cast<int>(v.size());
  ByteKazModel<float> m(cfg, 3);
  TokenScorer ts(m, v);
  CHECK(ts.unit_logprobs(to_bytes("x"), to_bytes("abab")).size() == 2);
  CHECK(ts.unit_logprobs(to_bytes("x"), to_bytes("abc")).size() == 2);
  ByteScorer bs(m);
  CHECK(bs.unit_logprobs(to_bytes("x"), to_bytes("abc")).size() == 3);
}

TEST_CASE("fertility comparison") {
  BpeVocab bytes_only;
  const std::vector<ByteSeq> docs{to_bytes("hello"), to_bytes("abc")};
  std::vector<Patching> singles{segment_fixed(5, 1), segment_fixed(3, 1)};
  CHECK(compare_fertility(bytes_only, singles, docs).ratio() == doctest::Approx(1.0));

  // "a"x32: merges (a,a) then (aa,aa) -> 8 tokens; zero-entropy patching capped at 8 -> 4 patches
  const std::vector<ByteSeq> corpus(1000, to_bytes("aaaa"));
  const auto v = train_bpe(corpus, 258);
  const std::vector<ByteSeq> fixture{ByteSeq(32, 'a'), ByteSeq{}};
  const std::vector<double> flat(32, 0.0);
  std::vector<Patching> ps{segment_entropy(flat, 1.0, 8), Patching{}};
  const auto table = compare_fertility(v, ps, fixture);
  CHECK(table.total.tokens == 8);
  CHECK(table.total.patches == 4);
  CHECK(table.ratio() == doctest::Approx(2.0));
  CHECK(table.tokens_per_byte() == doctest::Approx(0.25));
  CHECK(table.patches_per_byte() == doctest::Approx(0.125));
  CHECK(table.skipped_empty == 1);
  CHECK(table.rows.size() == 1);
  CHECK(table.to_json().at("skipped_empty") == 1);

  std::vector<Patching> wrong{segment_fixed(4, 1), Patching{}};
  CHECK_THROWS_AS(compare_fertility(v, wrong, fixture), Error);
}
