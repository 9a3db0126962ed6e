#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tdlab/rng.hpp"
#include "tdlab/tensor.hpp"
#include "tdlab/tokens.hpp"

namespace tdlab {

enum class CorruptionKind { none, fixed_ratio, per_sample_uniform };

/// input_mask_token substitutes MASK ids; hidden_zero zeroes the input hidden state
/// of dropped positions and leaves the token ids untouched.
enum class CorruptionMode { input_mask_token, hidden_zero };

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::none;
  double ratio = 0.0;  // fixed_ratio only
  CorruptionMode mode = CorruptionMode::input_mask_token;
  double t_min = 0.01;  // per_sample_uniform draws t ~ U(t_min, 1)

  static CorruptionSpec none() { return {}; }
  static CorruptionSpec fixed(double p, CorruptionMode m = CorruptionMode::input_mask_token) {
    return {CorruptionKind::fixed_ratio, p, m, 0.01};
  }
  static CorruptionSpec per_sample(CorruptionMode m = CorruptionMode::input_mask_token, double t_min = 0.01) {
    return {CorruptionKind::per_sample_uniform, 0.0, m, t_min};
  }

  void validate() const;
  bool operator==(const CorruptionSpec&) const = default;
};

struct CorruptionOutcome {
  /// Corrupted ids (input_mask_token) or the clean ids unchanged (hidden_zero).
  TokenMatrix tokens;
  /// 1 where the position was corrupted, row-major [B, S].
  std::vector<std::uint8_t> mask;
  /// Corruption level used for each row.
  std::vector<double> t;

  /// Complement of `mask`, the form Model::forward takes for hidden_zero mode.
  std::vector<std::uint8_t> keep_rows() const;
  std::size_t masked_count() const;
};

/// Forward masking: each row b gets a level t_b (fixed ratio, or U(t_min,1)), then
/// each position is corrupted independently with probability t_b.
/// Throws if `clean` already contains `mask_id`.
CorruptionOutcome forward_mask(const TokenMatrix& clean, const CorruptionSpec& spec, TokenId mask_id, Rng& rng);

/// Token dropout on hidden states h: [S, B, d]. Row (s, b) is zeroed with probability
/// r_b; survivors are NOT rescaled. Throws if `training` is false or `spec` is not
/// in hidden_zero mode. Returns the dropped-position indicator in [B, S] order.
std::pair<Tensor, std::vector<std::uint8_t>> token_dropout_hidden(const Tensor& h, const CorruptionSpec& spec,
                                                                  Rng& rng, bool training);

std::string to_string(CorruptionKind kind);
std::string to_string(CorruptionMode mode);
CorruptionKind parse_corruption_kind(const std::string& s);
CorruptionMode parse_corruption_mode(const std::string& s);

}  // namespace tdlab
