#pragma once

#include "bytekaz/config.hpp"
#include "bytekaz/nn.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <vector>

namespace bytekaz {

inline const double kMaxByteEntropy = std::log(256.0);

/// Patch boundaries over an n-byte sequence. Boundaries are strictly
/// increasing, start at 0, and every index is < n; patch j covers
/// [boundaries[j], boundaries[j+1]) with the last patch ending at n.
struct Patching {
  std::vector<std::size_t> boundaries;
  std::size_t n = 0;
  PatchStrategy strategy = PatchStrategy::kEntropy;
  double threshold = 0.0;  // entropy strategy only
  int stride = 0;          // fixed strategy only

  std::size_t patch_count() const { return boundaries.size(); }
  std::size_t begin(std::size_t j) const { return boundaries[j]; }
  std::size_t end(std::size_t j) const { return j + 1 < boundaries.size() ? boundaries[j + 1] : n; }
  std::size_t length(std::size_t j) const { return end(j) - begin(j); }

  /// Patch index of every byte.
  std::vector<int> patch_of() const;

  /// Throws if the tiling invariants do not hold.
  void validate() const;
};

/// Boundary at 0, and at i > 0 iff H[i] > threshold or the running patch has
/// reached `max_patch_len` bytes (0 disables the cap).
Patching segment_entropy(std::span<const double> entropies, double threshold, int max_patch_len = 0);

/// Boundaries at 0, k, 2k, ...
Patching segment_fixed(std::size_t n, int stride);

/// Boundary at 0 and immediately after each ASCII whitespace run.
Patching segment_whitespace(ByteView bytes, int max_patch_len = 0);

struct PatchStats {
  double mean_patch_size = 0.0;
  double patches_per_byte = 0.0;
  std::size_t total_bytes = 0;
  std::size_t total_patches = 0;
  std::map<std::size_t, std::size_t> histogram;  // patch length -> count
};

PatchStats patch_stats(std::span<const Patching> patchings);

/// Result of calibrating the entropy threshold on a corpus.
struct Calibration {
  double threshold = 0.0;
  double mean_patch_size = 0.0;
};

/// Picks a threshold whose mean patch size over the given per-document
/// entropies is within 10% of `target_mean_patch`.
Calibration calibrate_threshold(std::span<const std::vector<double>> entropies, double target_mean_patch, int max_patch_len);

/// Small causal byte transformer that estimates next-byte distributions.
template <typename Scalar>
class EntropyLm {
 public:
  static constexpr const char* kGroup = "entropy_lm";

  EntropyLm(ParamStore<Scalar>& store, const EntropyLmConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg),
        embedding_(&store.add("entropy.embedding", kGroup, -1, kByteVocab, cfg.width)),
        stack_(store, "entropy", cfg.layers, BlockShape{cfg.width, cfg.heads, cfg.mlp, 10000.0, false},
               [](const std::string&, int) { return std::string(kGroup); }, kGroup, rng),
        head_(LinearLayer<Scalar>::create(store, "entropy.head", kGroup, -1, cfg.width, kByteVocab, 0.02, rng)) {
    init_normal(*embedding_, 0.02, rng);
  }

  const EntropyLmConfig& config() const { return cfg_; }

  /// Logits for every row of `ids`; row r predicts ids[r+1].
  Var<Scalar> logits(Tape<Scalar>& t, std::span<const int> ids) const {
    auto x = embedding(t.param(*embedding_), ids);
    const auto pos = iota_positions(static_cast<Eigen::Index>(ids.size()));
    auto h = stack_.forward(t, x, pos, causal_mask(static_cast<Eigen::Index>(ids.size())));
    return head_(t, h);
  }

  /// Entropy (nats) of the predicted distribution for each byte of `bytes`
  /// plus one trailing value for the position after the end.
  std::vector<double> entropies_with_next(ByteView bytes) const {
    std::vector<int> ids;
    ids.reserve(bytes.size() + 1);
    ids.push_back(kBosByte);
    for (Byte b : bytes) ids.push_back(b);
    const std::size_t total = ids.size();
    std::vector<double> out(total, 0.0);
    const std::size_t window = static_cast<std::size_t>(cfg_.context);
    const std::size_t half = std::max<std::size_t>(window / 2, 1);

    auto run = [&](std::size_t start, std::size_t keep_from) {
      const std::size_t stop = std::min(start + window, total);
      Tape<Scalar> t;
      t.set_grad_enabled(false);
      auto z = logits(t, std::span<const int>(ids).subspan(start, stop - start)).value();
      for (std::size_t r = keep_from; r < stop; ++r) out[r] = row_entropy(z.row(static_cast<Eigen::Index>(r - start)));
      return stop;
    };

    std::size_t covered = run(0, 0);
    for (std::size_t k = 1; covered < total; ++k) covered = run(k * half, covered);
    return out;
  }

  /// Per-byte next-byte entropy in nats: H[i] is the entropy of the
  /// distribution the model assigns to byte i given the bytes before it.
  std::vector<double> next_byte_entropy(ByteView bytes) const {
    if (bytes.empty()) throw Error("next_byte_entropy: empty input");
    auto h = entropies_with_next(bytes);
    h.pop_back();
    return h;
  }

  Parameter<Scalar>& head_bias() const { return *head_.bias; }
  Parameter<Scalar>& head_weight() const { return *head_.weight; }

 private:
  template <typename Row>
  static double row_entropy(const Row& z) {
    const double mx = static_cast<double>(z.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index v = 0; v < z.size(); ++v) sum += std::exp(static_cast<double>(z(v)) - mx);
    const double log_z = mx + std::log(sum);
    double h = 0.0;
    for (Eigen::Index v = 0; v < z.size(); ++v) {
      const double lp = static_cast<double>(z(v)) - log_z;
      const double p = std::exp(lp);
      if (p > 0.0) h -= p * lp;
    }
    return std::clamp(h, 0.0, kMaxByteEntropy);
  }

  EntropyLmConfig cfg_;
  Parameter<Scalar>* embedding_;
  TransformerStack<Scalar> stack_;
  LinearLayer<Scalar> head_;
};

}  // namespace bytekaz
