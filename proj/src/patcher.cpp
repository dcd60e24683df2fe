#include "bytekaz/patcher.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace bytekaz {

std::vector<int> Patching::patch_of() const {
  std::vector<int> out(n, 0);
  for (std::size_t j = 0; j < boundaries.size(); ++j)
    for (std::size_t i = begin(j); i < end(j); ++i) out[i] = static_cast<int>(j);
  return out;
}

void Patching::validate() const {
  if (n == 0) {
    if (!boundaries.empty()) throw Error("patching: boundaries on an empty sequence");
    return;
  }
  if (boundaries.empty() || boundaries.front() != 0) throw Error("patching: first boundary must be 0");
  for (std::size_t j = 1; j < boundaries.size(); ++j)
    if (boundaries[j] <= boundaries[j - 1]) throw Error("patching: boundaries must be strictly increasing");
  if (boundaries.back() >= n) throw Error("patching: boundary index out of range");
}

Patching segment_entropy(std::span<const double> entropies, double threshold, int max_patch_len) {
  if (!std::isfinite(threshold)) throw Error("segment_entropy: threshold must be finite");
  Patching p;
  p.n = entropies.size();
  p.strategy = PatchStrategy::kEntropy;
  p.threshold = threshold;
  std::size_t start = 0;
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    const bool capped = max_patch_len > 0 && i - start >= static_cast<std::size_t>(max_patch_len);
    if (i == 0 || entropies[i] > threshold || capped) {
      p.boundaries.push_back(i);
      start = i;
    }
  }
  return p;
}

Patching segment_fixed(std::size_t n, int stride) {
  if (stride < 1) throw Error("segment_fixed: stride must be >= 1");
  Patching p;
  p.n = n;
  p.strategy = PatchStrategy::kFixedStride;
  p.stride = stride;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(stride)) p.boundaries.push_back(i);
  return p;
}

Patching segment_whitespace(ByteView bytes, int max_patch_len) {
  Patching p;
  p.n = bytes.size();
  p.strategy = PatchStrategy::kWhitespace;
  std::size_t start = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const bool after_run = i > 0 && is_ascii_space(bytes[i - 1]) && !is_ascii_space(bytes[i]);
    const bool capped = max_patch_len > 0 && i - start >= static_cast<std::size_t>(max_patch_len);
    if (i == 0 || after_run || capped) {
      p.boundaries.push_back(i);
      start = i;
    }
  }
  return p;
}

PatchStats patch_stats(std::span<const Patching> patchings) {
  if (patchings.empty()) throw Error("patch_stats: empty input");
  PatchStats s;
  for (const auto& p : patchings) {
    s.total_bytes += p.n;
    s.total_patches += p.patch_count();
    for (std::size_t j = 0; j < p.patch_count(); ++j) s.histogram[p.length(j)]++;
  }
  if (s.total_patches == 0) throw Error("patch_stats: no patches (all sequences empty)");
  s.mean_patch_size = static_cast<double>(s.total_bytes) / static_cast<double>(s.total_patches);
  s.patches_per_byte = static_cast<double>(s.total_patches) / static_cast<double>(s.total_bytes);
  return s;
}

namespace {

double mean_patch_at(std::span<const std::vector<double>> entropies, double threshold, int cap) {
  std::size_t bytes = 0;
  std::size_t patches = 0;
  for (const auto& h : entropies) {
    if (h.empty()) continue;
    const auto p = segment_entropy(h, threshold, cap);
    bytes += p.n;
    patches += p.patch_count();
  }
  return static_cast<double>(bytes) / static_cast<double>(patches);
}

}  // namespace

Calibration calibrate_threshold(std::span<const std::vector<double>> entropies, double target_mean_patch, int max_patch_len) {
  if (!(target_mean_patch >= 1.0)) throw Error("calibrate_threshold: target mean patch size must be >= 1");
  std::vector<double> levels;
  for (const auto& h : entropies) levels.insert(levels.end(), h.begin(), h.end());
  if (levels.empty()) throw Error("calibrate_threshold: empty corpus");
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  // Candidate thresholds sit between consecutive distinct entropy levels so
  // each candidate selects a distinct boundary set.
  std::vector<double> candidates;
  candidates.push_back(levels.front() - 0.5);
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) candidates.push_back(0.5 * (levels[i] + levels[i + 1]));
  candidates.push_back(levels.back() + 0.5);

  const double lo_mean = mean_patch_at(entropies, candidates.front(), max_patch_len);
  const double hi_mean = mean_patch_at(entropies, candidates.back(), max_patch_len);
  if (target_mean_patch < lo_mean / 1.1 || target_mean_patch > hi_mean * 1.1) {
    std::ostringstream msg;
    msg << "calibrate_threshold: target " << target_mean_patch << " unreachable; achievable mean patch size is [" << lo_mean
        << ", " << hi_mean << "]";
    throw Error(msg.str());
  }

  // Bisection for the first candidate whose mean reaches the target.
  std::size_t lo = 0;
  std::size_t hi = candidates.size() - 1;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (mean_patch_at(entropies, candidates[mid], max_patch_len) >= target_mean_patch) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  Calibration best{candidates[lo], mean_patch_at(entropies, candidates[lo], max_patch_len)};
  if (lo > 0) {
    const double below = mean_patch_at(entropies, candidates[lo - 1], max_patch_len);
    if (std::abs(below - target_mean_patch) < std::abs(best.mean_patch_size - target_mean_patch)) best = {candidates[lo - 1], below};
  }
  if (std::abs(best.mean_patch_size - target_mean_patch) > 0.1 * target_mean_patch) {
    std::ostringstream msg;
    msg << "calibrate_threshold: closest achievable mean patch size " << best.mean_patch_size << " is not within 10% of "
        << target_mean_patch;
    throw Error(msg.str());
  }
  return best;
}

}  // namespace bytekaz
