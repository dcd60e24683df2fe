#include "bytekaz/training.hpp"

#include "bytekaz/evaluation.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <sstream>

namespace bytekaz {

// ------------------------------------------------------------- optimizer

double scheduled_learning_rate(double base, int step, int warmup, int total, double min_ratio) {
  if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / warmup;
  const int span = std::max(total - warmup, 1);
  const double progress = std::clamp(static_cast<double>(step - warmup) / span, 0.0, 1.0);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return base * (min_ratio + (1.0 - min_ratio) * cosine);
}

double clip_gradients(ParamStore<float>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store)
    if (p->trainable && p->grad.size() != 0) sq += p->grad.cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& p : store)
      if (p->trainable && p->grad.size() != 0) p->grad *= s;
  }
  return norm;
}

void adamw_step(ParamStore<float>& store, OptimizerState& state, double lr, double weight_decay, double beta1, double beta2,
                double eps) {
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& p : store) {
    if (!p->trainable || p->grad.size() == 0) continue;
    auto& m = state.first[p->name];
    auto& v = state.second[p->name];
    if (m.size() == 0) {
      m = Matrix<float>::Zero(p->value.rows(), p->value.cols());
      v = Matrix<float>::Zero(p->value.rows(), p->value.cols());
    }
    m = static_cast<float>(beta1) * m + static_cast<float>(1.0 - beta1) * p->grad;
    v = static_cast<float>(beta2) * v + static_cast<float>(1.0 - beta2) * p->grad.cwiseProduct(p->grad);
    if (weight_decay > 0.0 && p->value.rows() > 1) p->value *= static_cast<float>(1.0 - lr * weight_decay);
    const auto denom = ((v.array() / static_cast<float>(c2)).sqrt() + static_cast<float>(eps));
    p->value.array() -= static_cast<float>(lr) * (m.array() / static_cast<float>(c1)) / denom;
  }
}

// ---------------------------------------------------------- LM training

namespace {

using UnitSeq = std::vector<int>;

// Consecutive windows of at most seq_len+1 units overlapping by one, so each
// target is predicted exactly once.
std::vector<UnitSeq> make_windows(std::span<const UnitSeq> docs, int seq_len) {
  std::vector<UnitSeq> out;
  const std::size_t len = static_cast<std::size_t>(seq_len) + 1;
  for (const auto& d : docs) {
    for (std::size_t s = 0; s + 1 < d.size(); s += len - 1) {
      const std::size_t e = std::min(s + len, d.size());
      out.emplace_back(d.begin() + static_cast<std::ptrdiff_t>(s), d.begin() + static_cast<std::ptrdiff_t>(e));
      if (e == d.size()) break;
    }
  }
  return out;
}

std::vector<int> shifted_targets(const UnitSeq& w) {
  std::vector<int> tg(w.size(), -1);
  for (std::size_t i = 0; i + 1 < w.size(); ++i) tg[i] = w[i + 1];
  return tg;
}

using LogitFn = std::function<Var<float>(Tape<float>&, std::span<const int>)>;

double heldout_loss(const LogitFn& logits, std::span<const UnitSeq> windows) {
  double nats = 0.0;
  std::size_t count = 0;
  for (const auto& w : windows) {
    Tape<float> t;
    t.set_grad_enabled(false);
    const auto tg = shifted_targets(w);
    const double mean = cross_entropy(logits(t, w), tg).value()(0, 0);
    nats += mean * static_cast<double>(w.size() - 1);
    count += w.size() - 1;
  }
  return count ? nats / static_cast<double>(count) : 0.0;
}

LmTrainReport train_lm(ParamStore<float>& store, const LogitFn& logits, std::span<const UnitSeq> train_docs,
                       std::span<const UnitSeq> heldout_docs, const LmTrainConfig& cfg, const std::string& tag, std::ostream* log) {
  if (cfg.steps < 0 || cfg.batch_size < 1 || cfg.seq_len < 1) throw Error(tag + ": steps >= 0, batch_size >= 1, seq_len >= 1 required");
  const auto windows = make_windows(train_docs, cfg.seq_len);
  if (windows.size() < static_cast<std::size_t>(cfg.batch_size))
    throw Error(tag + ": corpus too small to fill one batch (" + std::to_string(windows.size()) + " windows of up to " +
                std::to_string(cfg.seq_len) + " units, batch_size " + std::to_string(cfg.batch_size) + ")");
  auto eval_windows = make_windows(heldout_docs, cfg.seq_len);
  if (eval_windows.size() > static_cast<std::size_t>(cfg.eval_windows)) eval_windows.resize(static_cast<std::size_t>(cfg.eval_windows));

  LmTrainReport report;
  auto record = [&](int step, std::optional<double> train_loss) {
    const double h = heldout_loss(logits, eval_windows);
    nlohmann::json j{{"stage", tag}, {"step", step}, {"heldout_loss", h}};
    j["train_loss"] = train_loss ? nlohmann::json(*train_loss) : nlohmann::json(nullptr);
    if (log != nullptr) *log << j.dump() << '\n';
    report.log.push_back(j);
    return h;
  };
  report.initial_heldout_loss = record(0, std::nullopt);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);
  OptimizerState opt;
  double running = 0.0;
  int since = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    store.zero_grad();
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& w = windows[pick(rng)];
      Tape<float> t;
      const auto tg = shifted_targets(w);
      auto loss = cross_entropy(logits(t, w), tg);
      batch_loss += loss.value()(0, 0);
      t.backward(scale(loss, 1.0f / static_cast<float>(cfg.batch_size)));
    }
    clip_gradients(store, cfg.grad_clip);
    adamw_step(store, opt, scheduled_learning_rate(cfg.learning_rate, step, cfg.warmup_steps, cfg.steps, 0.1), cfg.weight_decay);
    running += batch_loss / cfg.batch_size;
    ++since;
    const bool last = step + 1 == cfg.steps;
    if (last || (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0)) {
      report.final_heldout_loss = record(step + 1, running / since);
      running = 0.0;
      since = 0;
    }
  }
  if (cfg.steps == 0) report.final_heldout_loss = report.initial_heldout_loss;
  store.zero_grad();
  return report;
}

void only_trainable(ParamStore<float>& store, const std::function<bool(const std::string&)>& group_pred) {
  store.set_trainable([&](const Parameter<float>& p) { return group_pred(p.group); });
}

bool is_body_group(const std::string& g) { return g.rfind("body.", 0) == 0; }
bool is_adapter_group(const std::string& g) { return g.rfind("adapter.", 0) == 0; }

}  // namespace

LmTrainReport pretrain_body_stage0(Checkpoint& ckpt, const BpeVocab& vocab, std::span<const ByteSeq> train,
                                   std::span<const ByteSeq> heldout, const LmTrainConfig& cfg, std::ostream* log) {
  if (static_cast<int>(vocab.size()) > ckpt.model->teacher().vocab())
    throw Error("pretrain_body_stage0: vocabulary (" + std::to_string(vocab.size()) + ") larger than the teacher embedding (" +
                std::to_string(ckpt.model->teacher().vocab()) + "); set token_vocab");
  auto encode_all = [&](std::span<const ByteSeq> docs) {
    std::vector<UnitSeq> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back(vocab.encode_ids(frame(d)));
    return out;
  };
  const auto tr = encode_all(train);
  const auto he = encode_all(heldout);
  auto& model = *ckpt.model;
  only_trainable(model.params(), [](const std::string& g) { return is_body_group(g) || g == kTeacherEmbeddingGroup; });
  LogitFn fn = [&model](Tape<float>& t, std::span<const int> ids) { return model.teacher().logits(t, ids); };
  auto report = train_lm(model.params(), fn, tr, he, cfg, "stage0", log);
  only_trainable(model.params(), [](const std::string&) { return false; });

  for (const auto& p : model.params())
    if (is_body_group(p->group) || p->group == kTeacherEmbeddingGroup) ckpt.loaded_groups.insert(p->group);
  ckpt.vocab = vocab;
  ckpt.stage = "0";
  ckpt.optimizer = {};
  ckpt.metadata["stage0"] = {{"steps", cfg.steps},
                             {"initial_heldout_loss", report.initial_heldout_loss},
                             {"final_heldout_loss", report.final_heldout_loss},
                             {"embedding_variance", model.teacher().embedding_variance()}};
  return report;
}

LmTrainReport train_entropy_lm(Checkpoint& ckpt, std::span<const ByteSeq> train, std::span<const ByteSeq> heldout,
                               const LmTrainConfig& cfg, std::ostream* log) {
  auto to_units = [](std::span<const ByteSeq> docs) {
    std::vector<UnitSeq> out;
    for (const auto& d : docs) {
      const auto f = frame(d);
      out.emplace_back(f.begin(), f.end());
    }
    return out;
  };
  const auto tr = to_units(train);
  const auto he = to_units(heldout);
  auto& model = *ckpt.model;
  auto& store = model.params();
  std::map<std::string, bool> saved;
  for (const auto& p : store) saved[p->name] = p->trainable;
  only_trainable(store, [](const std::string& g) { return g == EntropyLm<float>::kGroup; });
  LogitFn fn = [&model](Tape<float>& t, std::span<const int> ids) { return model.entropy_lm().logits(t, ids); };
  auto report = train_lm(store, fn, tr, he, cfg, "entropy_lm", log);
  for (auto& p : store) p->trainable = saved[p->name];
  ckpt.loaded_groups.insert(EntropyLm<float>::kGroup);
  if (ckpt.stage == "init") ckpt.stage = "entropy";
  ckpt.metadata["entropy_lm"] = {{"steps", cfg.steps},
                                 {"initial_heldout_loss", report.initial_heldout_loss},
                                 {"final_heldout_loss", report.final_heldout_loss}};
  return report;
}

// ------------------------------------------------------------ Stage A/B

void init_adapter(Checkpoint& ckpt, std::uint64_t seed) {
  auto& model = *ckpt.model;
  ByteKazModel<float> fresh(ckpt.config, seed);
  for (auto& p : model.params())
    if (is_adapter_group(p->group)) p->value = fresh.params().get(p->name).value;
  const double variance = model.teacher().embedding_variance();
  model.enc_proj().weight().value = init_encoder_projection(variance, ckpt.config.local.width, ckpt.config.body.width, seed).cast<float>();
  model.enc_proj().bias().value.setZero();
  model.enc_proj().norm_gain().value.setConstant(static_cast<float>(std::sqrt(variance)));
  for (const auto& p : model.params())
    if (is_adapter_group(p->group)) ckpt.loaded_groups.insert(p->group);
}

nlohmann::json StageMetrics::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["ce_nats_per_byte"] = ce_nats_per_byte ? nlohmann::json(*ce_nats_per_byte) : nlohmann::json(nullptr);
  j["align_loss"] = align_loss ? nlohmann::json(*align_loss) : nlohmann::json(nullptr);
  j["bpb_heldout"] = bpb_heldout;
  j["mean_patch_size"] = mean_patch_size;
  return j;
}

namespace {

void check_stage_preconditions(const Checkpoint& ckpt, const TrainConfig& cfg) {
  cfg.validate();
  const std::string have = ckpt.stage;
  if (cfg.stage == 'A') {
    if (have != "0" && have != "A")
      throw Error("train --stage A: requires a Stage-0 checkpoint (teacher body and token embedding); got stage '" + have + "'");
    if (!ckpt.has_group_prefix("body.") || ckpt.loaded_groups.count(kTeacherEmbeddingGroup) == 0)
      throw Error("train --stage A: missing Stage-0 teacher artifacts (body / teacher.embedding)");
    if (cfg.partition != PartitionMode::kAllFrozen)
      throw Error("train: stage A freezes the body; partition must be all_frozen, got " + to_string(cfg.partition));
    if (cfg.alpha > 0.0 && !ckpt.vocab) throw Error("train --stage A: alignment needs the teacher BPE vocabulary in the checkpoint");
  } else {
    if (have != "A" && have != "B") throw Error("train --stage B: requires a Stage-A checkpoint; got stage '" + have + "'");
    if (cfg.partition == PartitionMode::kAllFrozen) throw Error("train: stage B needs a trainable body partition, got all_frozen");
    if (cfg.alpha > 0.0) throw Error("train: the alignment loss applies to stage A only");
  }
  if (ckpt.config.patch.strategy == PatchStrategy::kEntropy && ckpt.loaded_groups.count(EntropyLm<float>::kGroup) == 0)
    throw Error("train: entropy patching requires a trained entropy LM in the checkpoint (run train-entropy-lm)");
  for (int l : cfg.align_layers)
    if (l < 0 || l >= ckpt.config.body.layers) throw Error("train: alignment layer " + std::to_string(l) + " out of range");
}

ByteSeq capped(const ByteSeq& doc, int seq_cap) {
  const std::size_t keep = std::min(doc.size(), static_cast<std::size_t>(seq_cap - 1));
  return ByteSeq(doc.begin(), doc.begin() + static_cast<std::ptrdiff_t>(keep));
}

}  // namespace

StageReport run_stage(Checkpoint& ckpt, const TrainConfig& cfg, std::span<const ByteSeq> train, std::span<const ByteSeq> heldout,
                      std::ostream* metrics) {
  check_stage_preconditions(ckpt, cfg);
  if (cfg.steps > 0 && train.empty()) throw Error("train: empty training corpus");
  if (heldout.empty()) throw Error("train: empty held-out corpus");

  const std::string tag(1, cfg.stage);
  if (cfg.stage == 'A' && ckpt.stage == "0") init_adapter(ckpt, cfg.seed);
  if (ckpt.stage != tag) ckpt.optimizer = {};

  auto& model = *ckpt.model;
  auto& store = model.params();
  store.set_trainable([&](const Parameter<float>& p) { return cfg.stage == 'A' && is_adapter_group(p.group); });
  StageReport report;
  report.partition = partition_parameters(store, ckpt.config.body, cfg.stage == 'A' ? PartitionMode::kAllFrozen : cfg.partition, cfg.last_k);
  report.hashes_before = group_hashes(store);

  std::vector<int> layers = cfg.align_layers;
  const bool align = cfg.stage == 'A' && cfg.alpha > 0.0;
  if (align && layers.empty()) layers.push_back(ckpt.config.body.layers - 1);

  // Frame and patch everything once; the entropy LM is frozen in both stages.
  std::vector<ByteSeq> train_framed, eval_docs;
  std::vector<Patching> train_patch, eval_patch;
  for (const auto& d : train) {
    if (d.empty()) continue;
    train_framed.push_back(frame(capped(d, cfg.seq_cap)));
    train_patch.push_back(model.patch(train_framed.back()));
  }
  if (cfg.steps > 0 && train_framed.empty()) throw Error("train: training corpus has no non-empty documents");
  for (const auto& d : heldout) {
    if (static_cast<int>(eval_docs.size()) >= cfg.eval_docs) break;
    if (d.empty()) continue;
    eval_docs.push_back(capped(d, cfg.seq_cap));
    eval_patch.push_back(model.patch(frame(eval_docs.back())));
  }
  std::vector<std::optional<std::vector<Matrix<float>>>> teacher_cache(train_framed.size());

  double ce_sum = 0.0, align_sum = 0.0;
  int since = 0;
  auto record = [&](int step) {
    StageMetrics m;
    m.step = step;
    if (since > 0) {
      m.ce_nats_per_byte = ce_sum / since;
      m.align_loss = align_sum / since;
    }
    const auto ev = evaluate_byte_model(model, eval_docs, &eval_patch);
    m.bpb_heldout = ev.bpb;
    m.mean_patch_size = ev.mean_patch_size;
    if (metrics != nullptr) *metrics << m.to_json().dump() << '\n' << std::flush;
    report.log.push_back(m);
    ce_sum = align_sum = 0.0;
    since = 0;
  };
  record(0);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_framed.size());
  std::size_t cursor = order.size();
  for (int step = 0; step < cfg.steps; ++step) {
    store.zero_grad();
    double ce_batch = 0.0, align_batch = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const auto& bytes = train_framed[idx];
      Tape<float> t;
      auto fr = model.forward(t, bytes, train_patch[idx]);
      auto loss = cross_entropy(fr.logits, fr.targets);
      ce_batch += loss.value()(0, 0);
      if (align) {
        if (!teacher_cache[idx]) teacher_cache[idx] = teacher_pooled_states(model, *ckpt.vocab, bytes, train_patch[idx], layers);
        std::vector<Var<float>> student;
        for (int l : layers) student.push_back(fr.body_trace.layer_outputs[static_cast<std::size_t>(l)]);
        auto al = loss_alignment<float>(t, student, *teacher_cache[idx], cfg.alpha);
        align_batch += al.value()(0, 0);
        loss = loss + al;
      }
      t.backward(scale(loss, 1.0f / static_cast<float>(cfg.batch_size)));
    }
    clip_gradients(store, cfg.grad_clip);
    adamw_step(store, ckpt.optimizer,
               scheduled_learning_rate(cfg.learning_rate, step, cfg.warmup_steps, cfg.steps, cfg.min_lr_ratio), cfg.weight_decay);
    ce_sum += ce_batch / cfg.batch_size;
    align_sum += align_batch / cfg.batch_size;
    ++since;
    if (step + 1 == cfg.steps || (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0)) record(step + 1);
  }
  store.zero_grad();

  std::ostringstream rs;
  rs << rng;
  ckpt.rng_state = rs.str();
  ckpt.stage = tag;
  ckpt.step += cfg.steps;
  ckpt.metadata["last_stage"] = {{"stage", tag}, {"steps", cfg.steps}, {"train", to_json(cfg)}};
  report.hashes_after = group_hashes(store);
  return report;
}

// ------------------------------------------------------------- gradcheck

std::string to_string(GradcheckTarget t) {
  switch (t) {
    case GradcheckTarget::kProjection: return "projection";
    case GradcheckTarget::kEncoderPooling: return "encoder_pooling";
    case GradcheckTarget::kProjections: return "projections";
    case GradcheckTarget::kBodyAttention: return "body_attention";
    case GradcheckTarget::kDecoderCrossAttention: return "decoder_cross_attention";
    case GradcheckTarget::kAlignment: return "alignment";
    case GradcheckTarget::kFullStack: return "full_stack";
  }
  return "?";
}

std::vector<GradcheckTarget> all_gradcheck_targets() {
  return {GradcheckTarget::kProjection,           GradcheckTarget::kEncoderPooling, GradcheckTarget::kProjections,
          GradcheckTarget::kBodyAttention,        GradcheckTarget::kDecoderCrossAttention, GradcheckTarget::kAlignment,
          GradcheckTarget::kFullStack};
}

GradcheckTarget parse_gradcheck_target(const std::string& s) {
  for (auto t : all_gradcheck_targets())
    if (to_string(t) == s) return t;
  throw Error("unknown gradcheck target '" + s + "'");
}

nlohmann::json GradcheckReport::to_json() const {
  return {{"target", target},
          {"tolerance", tolerance},
          {"max_rel_error", max_rel_error},
          {"entries_checked", entries_checked},
          {"group_errors", group_errors},
          {"frozen_with_grad", frozen_with_grad},
          {"passed", passed()}};
}

namespace {

struct FdAccumulator {
  std::map<std::string, std::pair<double, double>> sums;  // group -> (|a-n|^2, max(|a|^2,|n|^2) sums)
  std::map<std::string, std::pair<double, double>> norms;
  void add(const std::string& group, double a, double n) {
    auto& s = norms[group];
    sums[group].first += (a - n) * (a - n);
    s.first += a * a;
    s.second += n * n;
  }
  void finish(GradcheckReport& r) const {
    for (const auto& [g, d] : sums) {
      const auto& s = norms.at(g);
      const double denom = std::sqrt(std::max(s.first, s.second));
      const double err = denom > 0.0 ? std::sqrt(d.first) / denom : std::sqrt(d.first);
      r.group_errors[g] = err;
      r.max_rel_error = std::max(r.max_rel_error, err);
    }
  }
};

// Generic driver: `loss` evaluates on a fresh tape with current values.
void finite_differences(ParamStore<double>& store, const std::function<double(bool)>& loss,
                        const std::function<bool(const Parameter<double>&)>& selected, GradcheckReport& report, std::uint64_t seed,
                        int per_param) {
  store.zero_grad();
  loss(true);
  for (const auto& p : store)
    if (!p->trainable && p->grad.size() != 0) report.frozen_with_grad.push_back(p->name);

  std::mt19937_64 rng(seed);
  FdAccumulator acc;
  for (auto& p : store) {
    if (!selected(*p)) continue;
    const Matrix<double> analytic = p->grad.size() ? p->grad : Matrix<double>::Zero(p->value.rows(), p->value.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, p->value.size() - 1);
    const int count = static_cast<int>(std::min<Eigen::Index>(per_param, p->value.size()));
    for (int k = 0; k < count; ++k) {
      const Eigen::Index i = p->value.size() <= per_param ? k : pick(rng);
      const double orig = p->value.data()[i];
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      p->value.data()[i] = orig + h;
      const double up = loss(false);
      p->value.data()[i] = orig - h;
      const double down = loss(false);
      p->value.data()[i] = orig;
      acc.add(p->group + (p->name.find(".cross.") != std::string::npos ? ".cross" : ""), analytic.data()[i], (up - down) / (2 * h));
      ++report.entries_checked;
    }
  }
  acc.finish(report);
}

ModelConfig gradcheck_config() {
  ModelConfig c;
  c.local = {8, 1, 1, 2, 16, 10000.0, true};
  c.body = {2, 8, 2, 16, 10000.0};
  c.entropy = {1, 8, 2, 16, 32};
  c.patch.strategy = PatchStrategy::kFixedStride;
  c.patch.stride = 3;
  c.token_vocab = 260;
  return c;
}

bool selected_by(GradcheckTarget target, const Parameter<double>& p) {
  const auto& n = p.name;
  auto starts = [&](const char* s) { return n.rfind(s, 0) == 0; };
  const bool body_attn = starts("body.") && n.find(".attn.") != std::string::npos && n.find(".attn.norm") == std::string::npos;
  switch (target) {
    case GradcheckTarget::kProjection: return true;
    case GradcheckTarget::kEncoderPooling: return starts("encoder.pool.");
    case GradcheckTarget::kProjections: return starts("enc_proj.") || starts("dec_proj.");
    case GradcheckTarget::kBodyAttention: return body_attn;
    case GradcheckTarget::kDecoderCrossAttention: return starts("decoder.") && n.find(".cross.") != std::string::npos;
    case GradcheckTarget::kAlignment: return starts("encoder.") || starts("enc_proj.") || starts("byte_embedding");
    case GradcheckTarget::kFullStack: return p.group.rfind("adapter.", 0) == 0 || starts("body.");
  }
  return false;
}

}  // namespace

GradcheckReport gradcheck(GradcheckTarget target, double tolerance, std::uint64_t seed, std::size_t input_bytes) {
  GradcheckReport report;
  report.target = to_string(target);
  report.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  constexpr int kPerParam = 6;

  if (target == GradcheckTarget::kProjection) {
    // Affine map alone, no norm: the loss is quadratic in every parameter.
    ParamStore<double> store;
    Projection<double> proj(store, "proj", "proj", 5, 4, rng);
    proj.set_normalize(false);
    for (auto& p : store) init_normal(*p, 0.5, rng);
    Matrix<double> x(3, 5);
    std::normal_distribution<double> d(0.0, 1.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
    auto loss = [&](bool grad) {
      Tape<double> t;
      auto y = proj(t, t.constant(x));
      auto l = mse(y, Matrix<double>(Matrix<double>::Zero(y.rows(), y.cols())));
      if (grad) t.backward(l);
      return l.value()(0, 0);
    };
    finite_differences(store, loss, [](const Parameter<double>&) { return true; }, report, seed, kPerParam);
    return report;
  }

  ByteKazModel<double> model(gradcheck_config(), seed);
  auto& store = model.params();
  // Larger-than-init weights so every path carries a non-trivial signal.
  std::normal_distribution<double> noise(0.0, 0.3);
  for (auto& p : store)
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += noise(rng);

  ByteSeq bytes{kBosByte};
  std::uniform_int_distribution<int> byte(0, 255);
  while (bytes.size() < std::max<std::size_t>(input_bytes, 2)) bytes.push_back(static_cast<Byte>(byte(rng)));
  const Patching patching = model.patch(bytes);

  store.set_trainable([&](const Parameter<double>& p) { return selected_by(target, p); });
  std::vector<Matrix<double>> teacher;
  std::vector<int> layers{0, 1};
  const double alpha = 0.5;
  if (target == GradcheckTarget::kAlignment) {
    // Teacher shares the (frozen) body; its embedding is marked trainable
    // here so that any gradient leak into it would be caught.
    store.get("teacher.embedding").trainable = true;
    BpeVocab vocab;
    teacher = teacher_pooled_states(model, vocab, bytes, patching, layers);
  }

  auto loss = [&](bool grad) {
    Tape<double> t;
    auto fr = model.forward(t, bytes, patching);
    auto l = cross_entropy(fr.logits, fr.targets);
    if (target == GradcheckTarget::kAlignment) {
      std::vector<Var<double>> student;
      for (int li : layers) student.push_back(fr.body_trace.layer_outputs[static_cast<std::size_t>(li)]);
      l = l + loss_alignment<double>(t, student, teacher, alpha);
    }
    if (grad) t.backward(l);
    return l.value()(0, 0);
  };
  auto selected = [&](const Parameter<double>& p) { return selected_by(target, p); };
  finite_differences(store, loss, selected, report, seed, kPerParam);
  if (target == GradcheckTarget::kAlignment) {
    // The teacher embedding is expected to be absent from the frozen list
    // only because it is flagged trainable; check it directly.
    if (store.get("teacher.embedding").grad.size() != 0) report.frozen_with_grad.push_back("teacher.embedding");
  }
  return report;
}

}  // namespace bytekaz
