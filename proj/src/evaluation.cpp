#include "bytekaz/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace bytekaz {

std::vector<double> log_softmax(const RowVector<double>& logits) {
  const double mx = logits.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(logits(i) - mx);
  const double log_z = mx + std::log(sum);
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[static_cast<std::size_t>(i)] = logits(i) - log_z;
  return out;
}

namespace {

// Log-prob of ids[k] under row k-1 of `z`, for k in [from, ids.size()).
template <typename Ids>
std::vector<double> shifted_logprobs(const Matrix<float>& z, const Ids& ids, std::size_t from) {
  std::vector<double> out;
  for (std::size_t k = std::max<std::size_t>(from, 1); k < ids.size(); ++k) {
    const RowVector<double> row = z.row(static_cast<Eigen::Index>(k - 1)).cast<double>();
    out.push_back(log_softmax(row)[static_cast<std::size_t>(ids[k])]);
  }
  return out;
}

}  // namespace

std::vector<double> ByteScorer::unit_logprobs(ByteView prefix, ByteView continuation) const {
  if (continuation.empty()) return {};
  ByteSeq text(prefix.begin(), prefix.end());
  text.insert(text.end(), continuation.begin(), continuation.end());
  const auto framed = frame(text);
  Tape<float> t;
  t.set_grad_enabled(false);
  const auto fr = model_->forward(t, framed, model_->patch(framed));
  return shifted_logprobs(fr.logits.value(), framed, 1 + prefix.size());
}

std::vector<double> TokenScorer::unit_logprobs(ByteView prefix, ByteView continuation) const {
  if (continuation.empty()) return {};
  auto ids = vocab_->encode_ids(frame(prefix));
  const std::size_t from = ids.size();
  const auto cont = vocab_->encode_ids(continuation);
  ids.insert(ids.end(), cont.begin(), cont.end());
  Tape<float> t;
  t.set_grad_enabled(false);
  const auto z = model_->teacher().logits(t, ids).value();
  return shifted_logprobs(z, ids, from);
}

double bits_per_byte(const Scorer& scorer, std::span<const ByteSeq> corpus) {
  double nats = 0.0;
  std::size_t bytes = 0;
  for (const auto& doc : corpus) {
    if (doc.empty()) continue;
    for (double lp : scorer.unit_logprobs({}, doc)) nats -= lp;
    bytes += doc.size();
  }
  if (bytes == 0) throw Error("bits_per_byte: empty corpus");
  return nats / std::numbers::ln2 / static_cast<double>(bytes);
}

ByteEval evaluate_byte_model(const ByteKazModel<float>& model, std::span<const ByteSeq> corpus, const std::vector<Patching>* patchings) {
  if (patchings != nullptr && patchings->size() != corpus.size()) throw Error("evaluate_byte_model: one patching per document required");
  ByteEval out;
  std::size_t framed_bytes = 0, patches = 0;
  double nats = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].empty()) continue;
    const auto framed = frame(corpus[i]);
    const Patching p = patchings != nullptr ? (*patchings)[i] : model.patch(framed);
    Tape<float> t;
    t.set_grad_enabled(false);
    const auto fr = model.forward(t, framed, p);
    const auto& z = fr.logits.value();
    for (std::size_t k = 1; k < framed.size(); ++k) {
      const RowVector<double> row = z.row(static_cast<Eigen::Index>(k - 1)).cast<double>();
      nats -= log_softmax(row)[framed[k]];
    }
    out.total_bytes += corpus[i].size();
    framed_bytes += framed.size();
    patches += p.patch_count();
  }
  if (out.total_bytes == 0) throw Error("bits_per_byte: empty corpus");
  out.total_bits = nats / std::numbers::ln2;
  out.bpb = out.total_bits / static_cast<double>(out.total_bytes);
  out.mean_patch_size = static_cast<double>(framed_bytes) / static_cast<double>(patches);
  return out;
}

// ------------------------------------------------------------ MC scoring

void McItem::validate() const {
  if (choices.size() < 2) throw Error("mc item: at least two choices required");
  for (std::size_t i = 0; i < choices.size(); ++i)
    if (choices[i].empty()) throw Error("mc item: choice " + std::to_string(i) + " is empty");
  if (gold < 0 || gold >= static_cast<int>(choices.size())) throw Error("mc item: gold index out of range");
}

McScore score_mc(const Scorer& scorer, const McItem& item) {
  item.validate();
  McScore out;
  out.gold = item.gold;
  const auto prompt = to_bytes(item.prompt);
  for (const auto& c : item.choices) {
    const auto lp = scorer.unit_logprobs(prompt, to_bytes(c));
    if (lp.empty()) throw Error("score_mc: candidate has no scoring units");
    double sum = 0.0;
    for (double v : lp) sum += v;
    out.scores.push_back(sum / static_cast<double>(lp.size()));
  }
  for (std::size_t i = 1; i < out.scores.size(); ++i)
    if (out.scores[i] > out.scores[static_cast<std::size_t>(out.predicted)]) out.predicted = static_cast<int>(i);
  return out;
}

McItem parse_mc_item(const std::string& line, const std::string& where) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(where + ": invalid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw Error(where + ": expected an object");
  McItem item;
  if (!j.contains("prompt") || !j["prompt"].is_string()) throw Error(where + ": 'prompt' must be a string");
  if (!j.contains("choices") || !j["choices"].is_array()) throw Error(where + ": 'choices' must be an array of strings");
  if (!j.contains("gold") || !j["gold"].is_number_integer()) throw Error(where + ": 'gold' must be an integer");
  for (const auto& [key, value] : j.items())
    if (key != "prompt" && key != "choices" && key != "gold") throw Error(where + ": unknown field '" + key + "'");
  item.prompt = j["prompt"].get<std::string>();
  for (const auto& c : j["choices"]) {
    if (!c.is_string()) throw Error(where + ": 'choices' must be an array of strings");
    item.choices.push_back(c.get<std::string>());
  }
  item.gold = j["gold"].get<int>();
  try {
    item.validate();
  } catch (const Error& e) {
    throw Error(where + ": " + e.what());
  }
  return item;
}

McTask load_mc_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read task file " + path.string());
  McTask task;
  task.name = path.stem().string();
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    task.items.push_back(parse_mc_item(line, path.string() + ":" + std::to_string(no)));
  }
  if (task.items.empty()) throw Error(path.string() + ": task file has no items");
  return task;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json tasks_json = nlohmann::json::array();
  for (const auto& t : tasks) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& s : t.items) items.push_back({{"scores", s.scores}, {"predicted", s.predicted}, {"gold", s.gold}});
    tasks_json.push_back({{"task", t.name}, {"accuracy", t.accuracy}, {"items", items}});
  }
  nlohmann::json j{{"model_tag", model_tag}, {"config_hash", config_hash}, {"tasks", tasks_json}};
  j["bpb"] = bpb ? nlohmann::json(*bpb) : nlohmann::json(nullptr);
  j["mean_patch_size"] = mean_patch_size ? nlohmann::json(*mean_patch_size) : nlohmann::json(nullptr);
  return j;
}

std::string EvalReport::summary_table() const {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << "model " << model_tag << "  config " << config_hash << "\n";
  s << std::left << std::setw(24) << "task" << std::right << std::setw(8) << "items" << std::setw(10) << "accuracy" << "\n";
  for (const auto& t : tasks) s << std::left << std::setw(24) << t.name << std::right << std::setw(8) << t.items.size() << std::setw(10) << t.accuracy << "\n";
  if (bpb) s << "held-out BPB       " << *bpb << "\n";
  if (mean_patch_size) s << "mean patch size    " << *mean_patch_size << "\n";
  return s.str();
}

EvalReport eval_suite(const Scorer& scorer, std::span<const McTask> tasks, std::span<const ByteSeq> heldout) {
  EvalReport r;
  r.model_tag = scorer.tag();
  for (const auto& task : tasks) {
    TaskResult tr;
    tr.name = task.name;
    int correct = 0;
    for (std::size_t i = 0; i < task.items.size(); ++i) {
      try {
        tr.items.push_back(score_mc(scorer, task.items[i]));
      } catch (const Error& e) {
        throw Error(task.name + " item " + std::to_string(i) + ": " + e.what());
      }
      if (tr.items.back().predicted == task.items[i].gold) ++correct;
    }
    tr.accuracy = task.items.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(task.items.size());
    r.tasks.push_back(std::move(tr));
  }
  if (!heldout.empty()) r.bpb = bits_per_byte(scorer, heldout);
  return r;
}

// ------------------------------------------------------------- fertility

double FertilityTable::tokens_per_byte() const { return total.bytes ? static_cast<double>(total.tokens) / total.bytes : 0.0; }
double FertilityTable::patches_per_byte() const { return total.bytes ? static_cast<double>(total.patches) / total.bytes : 0.0; }
double FertilityTable::ratio() const { return total.patches ? static_cast<double>(total.tokens) / total.patches : 0.0; }

nlohmann::json FertilityTable::to_json() const {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& r : rows)
    docs.push_back({{"bytes", r.bytes},
                    {"tokens", r.tokens},
                    {"patches", r.patches},
                    {"tokens_per_byte", static_cast<double>(r.tokens) / r.bytes},
                    {"patches_per_byte", static_cast<double>(r.patches) / r.bytes},
                    {"ratio", static_cast<double>(r.tokens) / r.patches}});
  return {{"documents", docs},
          {"skipped_empty", skipped_empty},
          {"total", {{"bytes", total.bytes}, {"tokens", total.tokens}, {"patches", total.patches}}},
          {"tokens_per_byte", tokens_per_byte()},
          {"patches_per_byte", patches_per_byte()},
          {"ratio", ratio()}};
}

FertilityTable compare_fertility(const BpeVocab& vocab, std::span<const Patching> patchings, std::span<const ByteSeq> corpus) {
  if (patchings.size() != corpus.size()) throw Error("compare_fertility: one patching per document required");
  FertilityTable out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].empty()) {
      ++out.skipped_empty;
      continue;
    }
    if (patchings[i].n != corpus[i].size()) throw Error("compare_fertility: patching " + std::to_string(i) + " does not tile its document");
    FertilityRow r{corpus[i].size(), vocab.encode(corpus[i]).size(), patchings[i].patch_count()};
    out.total.bytes += r.bytes;
    out.total.tokens += r.tokens;
    out.total.patches += r.patches;
    out.rows.push_back(r);
  }
  return out;
}

// ------------------------------------------------------------ generation

int sample_index(const RowVector<double>& logits, double temperature, std::mt19937_64& rng) {
  if (!(temperature > 0.0)) throw Error("sample: temperature must be positive");
  const RowVector<double> scaled = logits / temperature;
  const auto lp = log_softmax(scaled);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    cum += std::exp(lp[i]);
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(lp.size()) - 1;
}

namespace {

int argmax(const RowVector<double>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i)
    if (row(i) > row(best)) best = i;
  return static_cast<int>(best);
}

}  // namespace

ByteSeq generate(const ByteKazModel<float>& model, ByteView prompt, const GenerateOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  ByteSeq seq = frame(prompt);
  auto [patching, opens] = model.patch_with_next(seq);
  const auto& pc = model.config().patch;
  ByteSeq out;
  for (std::size_t step = 0; step < opt.max_bytes; ++step) {
    Tape<float> t;
    t.set_grad_enabled(false);
    const auto fr = model.forward(t, seq, patching, opens);
    const RowVector<double> last = fr.logits.value().row(fr.logits.rows() - 1).cast<double>();
    const int b = opt.greedy ? argmax(last) : sample_index(last, opt.temperature, rng);
    out.push_back(static_cast<Byte>(b));

    // Freeze: the new byte joins the patch structure decided before it
    // existed; only the open/continue decision for the next byte is fresh.
    if (opens) patching.boundaries.push_back(seq.size());
    seq.push_back(static_cast<Byte>(b));
    patching.n = seq.size();
    const auto fresh = model.patch_with_next(seq);
    opens = fresh.second;
    if (pc.strategy != PatchStrategy::kFixedStride && pc.max_patch_len > 0 &&
        patching.length(patching.patch_count() - 1) >= static_cast<std::size_t>(pc.max_patch_len))
      opens = true;
  }
  return out;
}

std::vector<int> generate_tokens(const ByteKazModel<float>& model, std::span<const int> prompt_ids, const GenerateOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::vector<int> ids(prompt_ids.begin(), prompt_ids.end());
  if (ids.empty()) ids.push_back(kBosByte);
  std::vector<int> out;
  for (std::size_t step = 0; step < opt.max_bytes; ++step) {
    Tape<float> t;
    t.set_grad_enabled(false);
    const auto z = model.teacher().logits(t, ids).value();
    const RowVector<double> last = z.row(z.rows() - 1).cast<double>();
    const int id = opt.greedy ? argmax(last) : sample_index(last, opt.temperature, rng);
    ids.push_back(id);
    out.push_back(id);
  }
  return out;
}

}  // namespace bytekaz
