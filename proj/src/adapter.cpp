#include "bytekaz/decoder.hpp"

namespace bytekaz {

Matrix<double> init_encoder_projection(double body_embedding_variance, int local_width, int body_width, std::uint64_t seed) {
  if (!(body_embedding_variance > 0.0) || !std::isfinite(body_embedding_variance))
    throw Error("init_encoder_projection: embedding variance must be positive");
  if (local_width < 1 || body_width < 1) throw Error("init_encoder_projection: widths must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(body_embedding_variance / local_width));
  Matrix<double> w(local_width, body_width);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

std::vector<int> decoder_target_patches(const Patching& patching, bool next_opens_patch) {
  const auto owner = patching.patch_of();
  std::vector<int> target(patching.n, 0);
  for (std::size_t i = 0; i < patching.n; ++i) {
    if (i + 1 < patching.n) {
      target[i] = owner[i + 1];
    } else {
      target[i] = owner[i] + (next_opens_patch ? 1 : 0);
    }
  }
  return target;
}

Mask decoder_cross_mask(const Patching& patching, bool next_opens_patch) {
  const auto target = decoder_target_patches(patching, next_opens_patch);
  const auto n = static_cast<Eigen::Index>(patching.n);
  const auto rows = static_cast<Eigen::Index>(patching.patch_count()) + 1;
  Mask mask(n, rows);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index r = 0; r < rows; ++r) mask(i, r) = r <= target[static_cast<std::size_t>(i)];
  return mask;
}

}  // namespace bytekaz
