#include "commands.hpp"

#include "bytekaz/corpus.hpp"
#include "bytekaz/evaluation.hpp"
#include "bytekaz/training.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace bytekaz::cli {

namespace {

using nlohmann::json;

std::string dump(const json& j) { return j.dump(2, ' ', false, json::error_handler_t::replace); }

// ------------------------------------------------------------ settings

struct CorpusSettings {
  CorpusFormat format = CorpusFormat::kPlainText;
  std::string text_field = "text";
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
  std::size_t chunk_bytes = 1024;
};

struct Settings {
  json raw = json::object();
  ModelConfig model;
  TrainConfig train;
  LmTrainConfig stage0;
  LmTrainConfig entropy_lm;
  CorpusSettings corpus;
};

template <typename T>
void take(const json& v, const std::string& path, T& dst) {
  bool ok;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    ok = v.is_number_integer() || v.is_number_unsigned();
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = v.is_number();
  } else {
    ok = v.is_string();
  }
  if (!ok) throw Error("config: key '" + path + "' has the wrong type (got " + std::string(v.type_name()) + ")");
  dst = v.get<T>();
}

void apply_lm(LmTrainConfig& c, const json& j, const std::string& section) {
  if (!j.is_object()) throw Error("config: '" + section + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    const auto path = section + "." + k;
    if (k == "steps") take(v, path, c.steps);
    else if (k == "batch_size") take(v, path, c.batch_size);
    else if (k == "seq_len") take(v, path, c.seq_len);
    else if (k == "learning_rate") take(v, path, c.learning_rate);
    else if (k == "warmup_steps") take(v, path, c.warmup_steps);
    else if (k == "weight_decay") take(v, path, c.weight_decay);
    else if (k == "grad_clip") take(v, path, c.grad_clip);
    else if (k == "seed") take(v, path, c.seed);
    else if (k == "eval_interval") take(v, path, c.eval_interval);
    else if (k == "eval_windows") take(v, path, c.eval_windows);
    else throw Error("config: unknown key '" + path + "'");
  }
}

void apply_corpus(CorpusSettings& c, const json& j) {
  if (!j.is_object()) throw Error("config: 'corpus' must be an object");
  for (const auto& [k, v] : j.items()) {
    const auto path = "corpus." + k;
    if (k == "format") {
      std::string s;
      take(v, path, s);
      c.format = parse_corpus_format(s);
    } else if (k == "text_field") take(v, path, c.text_field);
    else if (k == "train_fraction") take(v, path, c.train_fraction);
    else if (k == "seed") take(v, path, c.seed);
    else if (k == "chunk_bytes") take(v, path, c.chunk_bytes);
    else throw Error("config: unknown key '" + path + "'");
  }
}

// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error("--set expects key=value, got '" + assignment + "'");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error("--set: malformed key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw Error("--set: '" + key.substr(0, dot) + "' is not a section");
    start = dot + 1;
  }
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file with model/train/stage0/entropy_lm/corpus sections")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set train.steps=10 (repeatable)");
}

Settings load_settings(const Common& c) {
  Settings s;
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw Error("cannot read config " + c.config);
    try {
      s.raw = json::parse(in);
    } catch (const json::exception& e) {
      throw Error("config " + c.config + ": invalid JSON (" + e.what() + ")");
    }
    if (!s.raw.is_object()) throw Error("config " + c.config + ": top level must be an object");
  }
  for (const auto& a : c.sets) apply_override(s.raw, a);
  for (const auto& [k, v] : s.raw.items()) {
    if (k == "model") apply_json(s.model, v);
    else if (k == "train") apply_json(s.train, v);
    else if (k == "stage0") apply_lm(s.stage0, v, "stage0");
    else if (k == "entropy_lm") apply_lm(s.entropy_lm, v, "entropy_lm");
    else if (k == "corpus") apply_corpus(s.corpus, v);
    else throw Error("config: unknown section '" + k + "'");
  }
  return s;
}

// A checkpoint fixes the architecture; only patch settings may be overridden.
void apply_model_overrides(Checkpoint& ckpt, const Settings& s) {
  if (!s.raw.contains("model")) return;
  ModelConfig merged = ckpt.config;
  apply_json(merged, s.raw["model"]);
  auto arch = [](ModelConfig c) {
    c.patch = {};
    return to_json(c);
  };
  const json want = arch(merged), have = arch(ckpt.config);
  for (const auto& [k, v] : want.items())
    if (v != have[k]) throw Error("config: model." + k + " differs from the checkpoint's architecture; only model.patch may change");
  ckpt.config.patch = merged.patch;
  ckpt.model->set_patch_config(merged.patch);
}

CorpusSplit load_corpus(const std::vector<std::string>& inputs, const Settings& s, std::ostream& err) {
  CorpusSpec spec;
  for (const auto& p : inputs) spec.inputs.emplace_back(p);
  spec.format = s.corpus.format;
  spec.text_field = s.corpus.text_field;
  spec.train_fraction = s.corpus.train_fraction;
  spec.seed = s.corpus.seed;
  spec.chunk_bytes = s.corpus.chunk_bytes;
  auto split = ingest(spec);
  const auto& r = split.report;
  if (r.dropped_invalid_utf8 > 0) err << "warning: dropped " << r.dropped_invalid_utf8 << " document(s) with invalid UTF-8\n";
  return split;
}

// All documents of the given files, chunked, no split (held-out files).
std::vector<ByteSeq> load_all(const std::vector<std::string>& inputs, const Settings& s, std::ostream& err) {
  std::vector<ByteSeq> out;
  std::size_t dropped = 0;
  for (const auto& p : inputs) {
    for (auto& d : read_documents(p, s.corpus.format, s.corpus.text_field)) {
      if (d.empty()) continue;
      if (!valid_utf8(d)) {
        ++dropped;
        continue;
      }
      for (auto& c : chunk_utf8(d, s.corpus.chunk_bytes)) out.push_back(std::move(c));
    }
  }
  if (dropped > 0) err << "warning: dropped " << dropped << " document(s) with invalid UTF-8\n";
  if (out.empty()) throw Error("no valid documents in the given files");
  return out;
}

ByteSeq read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  return ByteSeq(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string to_hex(ByteView b) {
  std::ostringstream s;
  for (Byte x : b) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(x);
  return s.str();
}

ByteSeq from_hex(const std::string& h) {
  if (h.size() % 2 != 0) throw Error("--prompt-hex: odd number of hex digits");
  ByteSeq out;
  for (std::size_t i = 0; i < h.size(); i += 2) {
    const auto pair = h.substr(i, 2);
    if (pair.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos) throw Error("--prompt-hex: invalid digit in '" + pair + "'");
    out.push_back(static_cast<Byte>(std::stoi(pair, nullptr, 16)));
  }
  return out;
}

std::vector<std::vector<double>> corpus_entropies(const EntropyLm<float>& lm, std::span<const ByteSeq> docs, std::size_t limit) {
  std::vector<std::vector<double>> out;
  for (const auto& d : docs) {
    if (out.size() >= limit) break;
    if (d.empty()) continue;
    out.push_back(lm.entropies_with_next(frame(d)));
    out.back().pop_back();
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Byte-level adapter around a frozen transformer body"};
  app.require_subcommand(1);

  // train-bpe
  Common c_bpe;
  std::vector<std::string> bpe_inputs;
  int bpe_size = 512;
  std::string bpe_out;
  auto* bpe = app.add_subcommand("train-bpe", "Train a byte-level BPE vocabulary");
  add_common(bpe, c_bpe);
  bpe->add_option("--input", bpe_inputs, "Corpus files")->required();
  bpe->add_option("--vocab-size", bpe_size, "Target vocabulary size (>= 257)");
  bpe->add_option("--out", bpe_out, "Output vocabulary JSON")->required();

  // pretrain-body
  Common c_pre;
  std::vector<std::string> pre_inputs;
  std::string pre_vocab, pre_out, pre_log;
  auto* pre = app.add_subcommand("pretrain-body", "Stage 0: train the body as a BPE token LM (the teacher)");
  add_common(pre, c_pre);
  pre->add_option("--vocab", pre_vocab, "BPE vocabulary JSON")->required()->check(CLI::ExistingFile);
  pre->add_option("--input", pre_inputs, "Corpus files")->required();
  pre->add_option("--out", pre_out, "Output checkpoint")->required();
  pre->add_option("--log", pre_log, "JSON-lines training log");

  // train-entropy-lm
  Common c_ent;
  std::vector<std::string> ent_inputs;
  std::string ent_in, ent_out, ent_log;
  double ent_target = 0.0;
  auto* ent = app.add_subcommand("train-entropy-lm", "Train the entropy LM used for patching");
  add_common(ent, c_ent);
  ent->add_option("--input", ent_inputs, "Corpus files")->required();
  ent->add_option("--checkpoint", ent_in, "Train inside this checkpoint (e.g. the Stage-0 one)")->check(CLI::ExistingFile);
  ent->add_option("--out", ent_out, "Output checkpoint")->required();
  ent->add_option("--log", ent_log, "JSON-lines training log");
  ent->add_option("--calibrate-mean", ent_target, "Calibrate the threshold to this mean patch size on held-out text");

  // train --stage
  Common c_tr;
  std::vector<std::string> tr_inputs;
  std::string tr_stage, tr_in, tr_out, tr_metrics, tr_entropy;
  auto* tr = app.add_subcommand("train", "Stage A (adapter) or Stage B (body attention) training");
  add_common(tr, c_tr);
  tr->add_option("--stage", tr_stage, "A or B")->required()->check(CLI::IsMember({"A", "B"}));
  tr->add_option("--checkpoint", tr_in, "Input checkpoint (Stage 0 for A, Stage A for B)")->required();
  tr->add_option("--input", tr_inputs, "Corpus files")->required();
  tr->add_option("--out", tr_out, "Output checkpoint")->required();
  tr->add_option("--metrics", tr_metrics, "JSON-lines metrics log");
  tr->add_option("--entropy", tr_entropy, "Take the entropy LM from this checkpoint")->check(CLI::ExistingFile);

  // eval
  Common c_ev;
  std::vector<std::string> ev_tasks, ev_heldout;
  std::string ev_ckpt, ev_out, ev_summary;
  bool ev_baseline = false;
  auto* ev = app.add_subcommand("eval", "Held-out BPB and multiple-choice accuracy");
  add_common(ev, c_ev);
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--tasks", ev_tasks, "MC task files (JSON lines)");
  ev->add_option("--heldout", ev_heldout, "Held-out corpus files");
  ev->add_option("--out", ev_out, "Write the report JSON here (default stdout)");
  ev->add_option("--summary", ev_summary, "Write a plain-text summary table here");
  ev->add_flag("--baseline", ev_baseline, "Score with the token teacher instead of the byte path");

  // patch-stats
  Common c_ps;
  std::string ps_input, ps_ckpt, ps_strategy = "entropy";
  double ps_theta = std::numeric_limits<double>::quiet_NaN();
  int ps_k = 4, ps_cap = -1;
  auto* ps = app.add_subcommand("patch-stats", "Segment a file and report patch statistics");
  add_common(ps, c_ps);
  ps->add_option("--input", ps_input, "Input file (treated as one byte sequence)")->required()->check(CLI::ExistingFile);
  ps->add_option("--strategy", ps_strategy, "entropy, fixed or whitespace")->check(CLI::IsMember({"entropy", "fixed", "whitespace"}));
  ps->add_option("--theta", ps_theta, "Entropy threshold in nats (default: checkpoint's)");
  ps->add_option("--k", ps_k, "Fixed stride");
  ps->add_option("--max-patch-len", ps_cap, "Patch length cap (0 disables; default: config)");
  ps->add_option("--checkpoint", ps_ckpt, "Checkpoint holding the entropy LM")->check(CLI::ExistingFile);

  // generate
  Common c_gen;
  std::string gen_ckpt, gen_prompt, gen_hex, gen_mode = "greedy";
  std::size_t gen_max = 64;
  double gen_temp = 1.0;
  std::uint64_t gen_seed = 0;
  bool gen_teacher = false;
  auto* gen = app.add_subcommand("generate", "Generate bytes from a checkpoint");
  add_common(gen, c_gen);
  gen->add_option("--checkpoint", gen_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  auto* prompt_opt = gen->add_option("--prompt", gen_prompt, "UTF-8 prompt");
  gen->add_option("--prompt-hex", gen_hex, "Prompt as hex bytes")->excludes(prompt_opt);
  gen->add_option("--max-bytes", gen_max, "Bytes (or teacher tokens) to generate")->check(CLI::PositiveNumber);
  gen->add_option("--mode", gen_mode, "greedy or sample")->check(CLI::IsMember({"greedy", "sample"}));
  gen->add_option("--temperature", gen_temp, "Sampling temperature")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Sampling seed");
  gen->add_flag("--teacher", gen_teacher, "Generate with the token teacher");

  // score-mc
  Common c_mc;
  std::string mc_ckpt, mc_item, mc_tasks;
  bool mc_baseline = false;
  auto* mc = app.add_subcommand("score-mc", "Score multiple-choice items");
  add_common(mc, c_mc);
  mc->add_option("--checkpoint", mc_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  auto* item_opt = mc->add_option("--item", mc_item, "One item as JSON {prompt, choices, gold}");
  mc->add_option("--tasks", mc_tasks, "Task file (JSON lines)")->excludes(item_opt)->check(CLI::ExistingFile);
  mc->add_flag("--baseline", mc_baseline, "Score with the token teacher");

  // gradcheck
  Common c_gc;
  std::string gc_target = "all";
  double gc_tol = 1e-4;
  std::uint64_t gc_seed = 7;
  std::size_t gc_bytes = 12;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks in float64");
  add_common(gc, c_gc);
  gc->add_option("--target", gc_target, "Component selector or 'all'");
  gc->add_option("--tolerance", gc_tol, "Relative error tolerance");
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--bytes", gc_bytes, "Framed input length");

  // partition-report
  Common c_pr;
  std::string pr_ckpt, pr_mode = "attention_only";
  int pr_k = 1;
  auto* pr = app.add_subcommand("partition-report", "Trainable-parameter report for a body partition mode");
  add_common(pr, c_pr);
  pr->add_option("--checkpoint", pr_ckpt, "Checkpoint (default: model from config)")->check(CLI::ExistingFile);
  pr->add_option("--mode", pr_mode, "all_frozen, attention_only, attention_plus_norm, last_k_full");
  pr->add_option("--k", pr_k, "k for last_k_full");

  // fertility
  Common c_fe;
  std::vector<std::string> fe_inputs;
  std::string fe_vocab, fe_ckpt;
  auto* fe = app.add_subcommand("fertility", "Compare BPE tokens and patches per byte");
  add_common(fe, c_fe);
  fe->add_option("--input", fe_inputs, "Corpus files")->required();
  fe->add_option("--vocab", fe_vocab, "BPE vocabulary (default: the checkpoint's)")->check(CLI::ExistingFile);
  fe->add_option("--checkpoint", fe_ckpt, "Checkpoint providing the patcher")->check(CLI::ExistingFile);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (bpe->parsed()) {
      const auto s = load_settings(c_bpe);
      const auto split = load_corpus(bpe_inputs, s, err);
      const auto docs = CorpusSplit::bytes_of(split.train);
      const auto vocab = train_bpe(docs, bpe_size);
      vocab.save(bpe_out);
      out << dump({{"vocab_size", vocab.size()}, {"merges", vocab.merges().size()}, {"documents", split.report.documents}}) << "\n";
    } else if (pre->parsed()) {
      const auto s = load_settings(c_pre);
      const auto vocab = BpeVocab::load(pre_vocab);
      auto cfg = s.model;
      cfg.token_vocab = std::max<int>(cfg.token_vocab, static_cast<int>(vocab.size()));
      auto ckpt = Checkpoint::fresh(cfg, s.stage0.seed);
      const auto split = load_corpus(pre_inputs, s, err);
      std::ofstream log;
      if (!pre_log.empty()) log.open(pre_log);
      const auto report = pretrain_body_stage0(ckpt, vocab, CorpusSplit::bytes_of(split.train), CorpusSplit::bytes_of(split.val),
                                               s.stage0, pre_log.empty() ? nullptr : &log);
      ckpt.save(pre_out);
      out << dump({{"initial_heldout_loss", report.initial_heldout_loss},
                   {"final_heldout_loss", report.final_heldout_loss},
                   {"uniform_loss", std::log(static_cast<double>(vocab.size()))},
                   {"embedding_variance", ckpt.model->teacher().embedding_variance()}})
          << "\n";
    } else if (ent->parsed()) {
      const auto s = load_settings(c_ent);
      Checkpoint ckpt = ent_in.empty() ? Checkpoint::fresh(s.model, s.entropy_lm.seed) : Checkpoint::load(ent_in);
      if (!ent_in.empty()) apply_model_overrides(ckpt, s);
      const auto split = load_corpus(ent_inputs, s, err);
      const auto val = CorpusSplit::bytes_of(split.val);
      std::ofstream log;
      if (!ent_log.empty()) log.open(ent_log);
      const auto report = train_entropy_lm(ckpt, CorpusSplit::bytes_of(split.train), val, s.entropy_lm, ent_log.empty() ? nullptr : &log);
      json summary{{"initial_heldout_loss", report.initial_heldout_loss}, {"final_heldout_loss", report.final_heldout_loss}};
      if (ent_target > 0.0) {
        const auto h = corpus_entropies(ckpt.model->entropy_lm(), val, 64);
        const auto cal = calibrate_threshold(h, ent_target, ckpt.config.patch.max_patch_len);
        ckpt.config.patch.threshold = cal.threshold;
        ckpt.model->set_threshold(cal.threshold);
        summary["threshold"] = cal.threshold;
        summary["calibrated_mean_patch_size"] = cal.mean_patch_size;
      }
      ckpt.save(ent_out);
      out << dump(summary) << "\n";
    } else if (tr->parsed()) {
      auto s = load_settings(c_tr);
      s.train.stage = tr_stage[0];
      const bool partition_given = s.raw.contains("train") && s.raw["train"].contains("partition");
      if (s.train.stage == 'B' && !partition_given) s.train.partition = PartitionMode::kAttentionOnly;
      if (!std::filesystem::exists(tr_in))
        throw Error("train --stage " + tr_stage + ": checkpoint not found: " + tr_in +
                    (tr_stage == "B" ? " (Stage B needs the Stage-A checkpoint)" : " (Stage A needs the Stage-0 checkpoint)"));
      auto ckpt = Checkpoint::load(tr_in);
      apply_model_overrides(ckpt, s);
      if (!tr_entropy.empty()) {
        const auto src = Checkpoint::load(tr_entropy);
        ckpt.import_groups(src, [](const std::string& g) { return g == EntropyLm<float>::kGroup; });
        if (!s.raw.contains("model")) {
          ckpt.config.patch = src.config.patch;
          ckpt.model->set_patch_config(src.config.patch);
        }
      }
      const auto split = load_corpus(tr_inputs, s, err);
      std::ofstream metrics;
      if (!tr_metrics.empty()) metrics.open(tr_metrics);
      const auto report = run_stage(ckpt, s.train, CorpusSplit::bytes_of(split.train), CorpusSplit::bytes_of(split.val),
                                    tr_metrics.empty() ? nullptr : &metrics);
      ckpt.save(tr_out);
      json changed = json::array(), unchanged = json::array();
      for (const auto& [g, h] : report.hashes_before) (report.hashes_after.at(g) == h ? unchanged : changed).push_back(g);
      out << dump({{"stage", tr_stage},
                   {"final", report.log.back().to_json()},
                   {"initial", report.log.front().to_json()},
                   {"changed_groups", changed},
                   {"unchanged_groups", unchanged}})
          << "\n";
    } else if (ev->parsed()) {
      const auto s = load_settings(c_ev);
      auto ckpt = Checkpoint::load(ev_ckpt);
      apply_model_overrides(ckpt, s);
      if (ev_baseline && !ckpt.vocab) throw Error("eval --baseline: checkpoint has no teacher vocabulary");
      std::vector<McTask> tasks;
      for (const auto& f : ev_tasks) tasks.push_back(load_mc_task(f));
      std::vector<ByteSeq> heldout;
      if (!ev_heldout.empty()) heldout = load_all(ev_heldout, s, err);
      std::unique_ptr<Scorer> scorer;
      if (ev_baseline) scorer = std::make_unique<TokenScorer>(*ckpt.model, *ckpt.vocab);
      else scorer = std::make_unique<ByteScorer>(*ckpt.model);
      auto report = eval_suite(*scorer, tasks, heldout);
      report.config_hash = config_hash(ckpt.config);
      if (!ev_baseline && !heldout.empty()) report.mean_patch_size = evaluate_byte_model(*ckpt.model, heldout).mean_patch_size;
      if (ev_out.empty()) out << dump(report.to_json()) << "\n";
      else write_text(ev_out, dump(report.to_json()) + "\n");
      if (!ev_summary.empty()) write_text(ev_summary, report.summary_table());
    } else if (ps->parsed()) {
      const auto s = load_settings(c_ps);
      const auto bytes = read_file(ps_input);
      if (bytes.empty()) throw Error("patch-stats: empty input");
      PatchConfig pc = s.model.patch;
      std::optional<Checkpoint> ckpt;
      if (!ps_ckpt.empty()) {
        ckpt = Checkpoint::load(ps_ckpt);
        if (!s.raw.contains("model")) pc = ckpt->config.patch;
      }
      pc.strategy = parse_patch_strategy(ps_strategy);
      if (!std::isnan(ps_theta)) pc.threshold = ps_theta;
      if (ps_cap >= 0) pc.max_patch_len = ps_cap;
      Patching p;
      switch (pc.strategy) {
        case PatchStrategy::kFixedStride: p = segment_fixed(bytes.size(), ps_k); break;
        case PatchStrategy::kWhitespace: p = segment_whitespace(bytes, pc.max_patch_len); break;
        case PatchStrategy::kEntropy: {
          if (!ckpt) throw Error("patch-stats --strategy entropy: needs --checkpoint with a trained entropy LM");
          if (ckpt->loaded_groups.count(EntropyLm<float>::kGroup) == 0) throw Error("patch-stats: checkpoint has no trained entropy LM");
          p = segment_entropy(ckpt->model->entropy_lm().next_byte_entropy(bytes), pc.threshold, pc.max_patch_len);
          break;
        }
      }
      const auto st = patch_stats(std::span<const Patching>(&p, 1));
      json hist = json::object();
      for (const auto& [len, count] : st.histogram) hist[std::to_string(len)] = count;
      json j{{"strategy", to_string(pc.strategy)}, {"n", p.n},         {"m", p.patch_count()}, {"mean_patch_size", st.mean_patch_size},
             {"patches_per_byte", st.patches_per_byte}, {"histogram", hist}, {"boundaries", p.boundaries}};
      if (pc.strategy == PatchStrategy::kEntropy) j["threshold"] = pc.threshold;
      if (pc.strategy == PatchStrategy::kFixedStride) j["k"] = ps_k;
      out << dump(j) << "\n";
    } else if (gen->parsed()) {
      const auto s = load_settings(c_gen);
      auto ckpt = Checkpoint::load(gen_ckpt);
      apply_model_overrides(ckpt, s);
      const ByteSeq prompt = gen_hex.empty() ? to_bytes(gen_prompt) : from_hex(gen_hex);
      GenerateOptions opt{gen_max, gen_mode == "greedy", gen_temp, gen_seed};
      ByteSeq output;
      if (gen_teacher) {
        if (!ckpt.vocab) throw Error("generate --teacher: checkpoint has no teacher vocabulary");
        const auto ids = generate_tokens(*ckpt.model, ckpt.vocab->encode_ids(frame(prompt)), opt);
        output = ckpt.vocab->decode(ids);
      } else {
        output = generate(*ckpt.model, prompt, opt);
      }
      out << dump({{"mode", gen_mode}, {"prompt_hex", to_hex(prompt)}, {"output_hex", to_hex(output)}, {"output_text", to_string(output)}})
          << "\n";
    } else if (mc->parsed()) {
      const auto s = load_settings(c_mc);
      auto ckpt = Checkpoint::load(mc_ckpt);
      apply_model_overrides(ckpt, s);
      if (mc_baseline && !ckpt.vocab) throw Error("score-mc --baseline: checkpoint has no teacher vocabulary");
      std::unique_ptr<Scorer> scorer;
      if (mc_baseline) scorer = std::make_unique<TokenScorer>(*ckpt.model, *ckpt.vocab);
      else scorer = std::make_unique<ByteScorer>(*ckpt.model);
      std::vector<McItem> items;
      if (!mc_item.empty()) items.push_back(parse_mc_item(mc_item, "--item"));
      else if (!mc_tasks.empty()) items = load_mc_task(mc_tasks).items;
      else throw Error("score-mc: give --item or --tasks");
      json arr = json::array();
      for (const auto& it : items) {
        const auto r = score_mc(*scorer, it);
        arr.push_back({{"scores", r.scores}, {"predicted", r.predicted}, {"gold", r.gold}});
      }
      out << dump(arr) << "\n";
    } else if (gc->parsed()) {
      load_settings(c_gc);
      std::vector<GradcheckTarget> targets = gc_target == "all" ? all_gradcheck_targets() : std::vector{parse_gradcheck_target(gc_target)};
      json arr = json::array();
      bool ok = true;
      for (auto t : targets) {
        const auto r = gradcheck(t, gc_tol, gc_seed, gc_bytes);
        ok = ok && r.passed();
        arr.push_back(r.to_json());
      }
      out << dump(arr) << "\n";
      return ok ? 0 : 1;
    } else if (pr->parsed()) {
      const auto s = load_settings(c_pr);
      std::unique_ptr<ByteKazModel<float>> fresh;
      std::optional<Checkpoint> ckpt;
      ParamStore<float>* store = nullptr;
      BodyConfig body = s.model.body;
      if (!pr_ckpt.empty()) {
        ckpt = Checkpoint::load(pr_ckpt);
        store = &ckpt->model->params();
        body = ckpt->config.body;
      } else {
        fresh = std::make_unique<ByteKazModel<float>>(s.model, 0);
        store = &fresh->params();
      }
      store->set_trainable([](const Parameter<float>&) { return false; });
      const auto part = partition_parameters(*store, body, parse_partition_mode(pr_mode), pr_k);
      json groups = json::array();
      for (const auto& g : part.groups)
        if (g.name.rfind("body.", 0) == 0) groups.push_back({{"group", g.name}, {"parameters", g.parameters}, {"trainable", g.trainable}});
      out << dump({{"mode", pr_mode}, {"groups", groups}, {"trainable_parameters", part.trainable_parameters("body.")}}) << "\n";
    } else if (fe->parsed()) {
      const auto s = load_settings(c_fe);
      std::optional<Checkpoint> ckpt;
      if (!fe_ckpt.empty()) ckpt = Checkpoint::load(fe_ckpt);
      std::optional<BpeVocab> vocab;
      if (!fe_vocab.empty()) vocab = BpeVocab::load(fe_vocab);
      else if (ckpt && ckpt->vocab) vocab = ckpt->vocab;
      else throw Error("fertility: give --vocab or a checkpoint with a vocabulary");
      const auto docs = load_all(fe_inputs, s, err);
      std::vector<Patching> patchings;
      for (const auto& d : docs) {
        if (ckpt) {
          patchings.push_back(ckpt->model->patch(d));
        } else if (s.model.patch.strategy == PatchStrategy::kFixedStride) {
          patchings.push_back(segment_fixed(d.size(), s.model.patch.stride));
        } else if (s.model.patch.strategy == PatchStrategy::kWhitespace) {
          patchings.push_back(segment_whitespace(d, s.model.patch.max_patch_len));
        } else {
          throw Error("fertility: entropy patching needs --checkpoint");
        }
      }
      const auto table = compare_fertility(*vocab, patchings, docs);
      if (table.skipped_empty > 0) err << "warning: skipped " << table.skipped_empty << " empty document(s)\n";
      auto j = table.to_json();
      j.erase("documents");
      out << dump(j) << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace bytekaz::cli
