#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdlab {

using TokenId = std::int32_t;

/// Byte-level vocabulary: ids [0, size-2) are regular symbols, then MASK, then PAD.
/// The default is 256 byte values + MASK (256) + PAD (257).
struct Vocab {
  std::size_t size = 258;

  TokenId mask_id() const { return static_cast<TokenId>(size - 2); }
  TokenId pad_id() const { return static_cast<TokenId>(size - 1); }
  std::size_t regular_count() const { return size - 2; }
  bool is_special(TokenId id) const { return id == mask_id() || id == pad_id(); }

  static Vocab bytes() { return Vocab{258}; }
  static Vocab for_size(std::size_t n) {
    if (n < 3) throw std::invalid_argument("vocab size must be >= 3, got " + std::to_string(n));
    return Vocab{n};
  }
};

/// Row-major [rows, cols] matrix of token ids (batch x sequence).
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;

  TokenMatrix() = default;
  TokenMatrix(std::size_t r, std::size_t c, TokenId fill = 0) : rows(r), cols(c), ids(r * c, fill) {}
  TokenMatrix(std::size_t r, std::size_t c, std::vector<TokenId> values) : rows(r), cols(c), ids(std::move(values)) {
    if (ids.size() != rows * cols) throw std::invalid_argument("TokenMatrix: size does not match rows*cols");
  }

  TokenId& at(std::size_t r, std::size_t c) { return ids[r * cols + c]; }
  TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  std::span<const TokenId> row(std::size_t r) const { return {ids.data() + r * cols, cols}; }
  std::span<TokenId> row(std::size_t r) { return {ids.data() + r * cols, cols}; }
  std::size_t size() const { return ids.size(); }

  /// Columns [begin, end) of every row.
  TokenMatrix columns(std::size_t begin, std::size_t end) const {
    TokenMatrix out(rows, end - begin);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = begin; c < end; ++c) out.at(r, c - begin) = at(r, c);
    return out;
  }

  bool operator==(const TokenMatrix&) const = default;
};

}  // namespace tdlab
