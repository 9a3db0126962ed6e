#include "tdlab/corruption.hpp"

#include <stdexcept>

namespace tdlab {

namespace {

std::vector<double> draw_levels(const CorruptionSpec& spec, std::size_t rows, Rng& rng) {
  std::vector<double> t(rows, 0.0);
  switch (spec.kind) {
    case CorruptionKind::none:
      break;
    case CorruptionKind::fixed_ratio:
      std::fill(t.begin(), t.end(), spec.ratio);
      break;
    case CorruptionKind::per_sample_uniform:
      for (double& v : t) v = rng.uniform(spec.t_min, 1.0);
      break;
  }
  return t;
}

}  // namespace

void CorruptionSpec::validate() const {
  // ratio 1.0 is admitted: it is the fully-masked endpoint of the forward process.
  if (kind == CorruptionKind::fixed_ratio && !(ratio >= 0.0 && ratio <= 1.0))
    throw std::invalid_argument("corruption.ratio: must be in [0, 1], got " + std::to_string(ratio));
  if (!(t_min > 0.0 && t_min <= 0.1))
    throw std::invalid_argument("corruption.t_min: must be in (0, 0.1], got " + std::to_string(t_min));
}

std::vector<std::uint8_t> CorruptionOutcome::keep_rows() const {
  std::vector<std::uint8_t> keep(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) keep[i] = mask[i] ? 0 : 1;
  return keep;
}

std::size_t CorruptionOutcome::masked_count() const {
  std::size_t n = 0;
  for (auto m : mask) n += m;
  return n;
}

CorruptionOutcome forward_mask(const TokenMatrix& clean, const CorruptionSpec& spec, TokenId mask_id, Rng& rng) {
  spec.validate();
  for (TokenId id : clean.ids)
    if (id == mask_id) throw std::invalid_argument("forward_mask: clean input already contains the mask id");

  CorruptionOutcome out{clean, std::vector<std::uint8_t>(clean.size(), 0), draw_levels(spec, clean.rows, rng)};
  if (spec.kind == CorruptionKind::none) return out;
  for (std::size_t b = 0; b < clean.rows; ++b) {
    const double t = out.t[b];
    for (std::size_t s = 0; s < clean.cols; ++s) {
      if (!rng.bernoulli(t)) continue;
      out.mask[b * clean.cols + s] = 1;
      if (spec.mode == CorruptionMode::input_mask_token) out.tokens.at(b, s) = mask_id;
    }
  }
  return out;
}

std::pair<Tensor, std::vector<std::uint8_t>> token_dropout_hidden(const Tensor& h, const CorruptionSpec& spec,
                                                                  Rng& rng, bool training) {
  if (!training) throw std::logic_error("token_dropout_hidden: token dropout is train-only");
  if (spec.mode != CorruptionMode::hidden_zero)
    throw std::invalid_argument("token_dropout_hidden: corruption mode must be hidden_zero");
  spec.validate();
  if (h.rank() != 3) throw std::invalid_argument("token_dropout_hidden: expected [S, B, d], got " + shape_str(h.shape()));
  const std::size_t S = h.dim(0), B = h.dim(1);

  const std::vector<double> r = draw_levels(spec, B, rng);
  std::vector<std::uint8_t> keep(S * B, 1);          // [S, B]
  std::vector<std::uint8_t> indicator(B * S, 0);     // [B, S]
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s)
      if (r[b] > 0.0 && rng.bernoulli(r[b])) {
        keep[s * B + b] = 0;
        indicator[b * S + s] = 1;
      }
  return {mask_rows(h, keep), std::move(indicator)};
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::none: return "none";
    case CorruptionKind::fixed_ratio: return "fixed_ratio";
    case CorruptionKind::per_sample_uniform: return "per_sample_uniform";
  }
  return "?";
}

std::string to_string(CorruptionMode mode) {
  return mode == CorruptionMode::input_mask_token ? "input_mask_token" : "hidden_zero";
}

CorruptionKind parse_corruption_kind(const std::string& s) {
  if (s == "none") return CorruptionKind::none;
  if (s == "fixed_ratio") return CorruptionKind::fixed_ratio;
  if (s == "per_sample_uniform") return CorruptionKind::per_sample_uniform;
  throw std::invalid_argument("corruption.kind: unknown value '" + s + "'");
}

CorruptionMode parse_corruption_mode(const std::string& s) {
  if (s == "input_mask_token") return CorruptionMode::input_mask_token;
  if (s == "hidden_zero") return CorruptionMode::hidden_zero;
  throw std::invalid_argument("corruption.mode: unknown value '" + s + "'");
}

}  // namespace tdlab
