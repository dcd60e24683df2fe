#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bytekaz {

using Byte = std::uint8_t;
using ByteSeq = std::vector<Byte>;
using ByteView = std::span<const Byte>;

/// Row-major dense matrix; rows are sequence positions throughout the library.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Boolean attention mask, rows = queries, cols = keys, true = may attend.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Byte prepended to every document before it reaches a model, so the first
/// real byte has a prediction row like every other byte.
inline constexpr Byte kBosByte = 0x02;

inline constexpr int kByteVocab = 256;

/// A byte sequence with the document it came from.
struct Document {
  ByteSeq bytes;
  std::string source;
  std::size_t index = 0;
};

inline ByteSeq to_bytes(std::string_view text) { return ByteSeq(text.begin(), text.end()); }

inline std::string to_string(ByteView bytes) { return std::string(bytes.begin(), bytes.end()); }

/// [BOS] + bytes.
inline ByteSeq frame(ByteView bytes) {
  ByteSeq out;
  out.reserve(bytes.size() + 1);
  out.push_back(kBosByte);
  out.insert(out.end(), bytes.begin(), bytes.end());
  return out;
}

inline bool is_ascii_space(Byte b) { return b == ' ' || b == '\t' || b == '\n' || b == '\r' || b == '\v' || b == '\f'; }

}  // namespace bytekaz
