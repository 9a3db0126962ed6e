#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tdlab/model.hpp"
#include "tdlab/rng.hpp"
#include "tdlab/tokens.hpp"

namespace tdlab {

enum class ScheduleShape { uniform, cosine };

/// Corruption levels indexed by k: levels[k] = t_k, with t_K = 1 > ... > t_0 = 0.
struct ReverseSchedule {
  std::size_t steps = 0;  // K
  std::vector<double> levels;
  ScheduleShape shape = ScheduleShape::uniform;

  double t(std::size_t k) const { return levels.at(k); }
};

/// uniform: t_k = k/K. cosine: t_k = cos(pi/2 * (K-k)/K). Throws if K < 1.
ReverseSchedule make_schedule(std::size_t steps, ScheduleShape shape);

enum class RemaskKind { random, low_confidence, semi_ar };

struct RemaskStrategy {
  RemaskKind kind = RemaskKind::low_confidence;
  std::size_t block_len = 0;  // semi_ar only; must divide the generation length

  static RemaskStrategy random() { return {RemaskKind::random, 0}; }
  static RemaskStrategy low_confidence() { return {RemaskKind::low_confidence, 0}; }
  static RemaskStrategy semi_ar(std::size_t block_len) { return {RemaskKind::semi_ar, block_len}; }
};

struct GenState {
  std::vector<TokenId> tokens;  // prompt followed by the generated region
  std::vector<std::uint8_t> masked;
  std::size_t prompt_len = 0;
  std::size_t step_k = 0;

  std::size_t gen_len() const { return tokens.size() - prompt_len; }
  std::size_t masked_count() const;
};

/// Prompt followed by `length` MASK tokens, all of them masked.
GenState initial_state(std::span<const TokenId> prompt, std::size_t length, TokenId mask_id);

/// Number of generated positions left masked at level t: round(t * L).
std::size_t masked_target(double t, std::size_t length);

/// One predict-and-remask step from level t_k to t_km1 (< t_k). Fills every masked
/// position by temperature sampling (argmax at temperature 0), then remasks so that
/// exactly masked_target(t_km1, L) positions remain masked.
GenState reverse_step(const Model& model, const GenState& state, double t_k, double t_km1,
                      const RemaskStrategy& strategy, Rng& rng, double temperature);

struct DiffusionTrace {
  std::vector<std::size_t> masked_counts;  // before the first step, then after each step
};

/// Discretized reverse process from a fully masked generation region. Returns the L
/// generated tokens (never MASK or PAD).
std::vector<TokenId> generate_diffusion(const Model& model, std::span<const TokenId> prompt, std::size_t length,
                                        const ReverseSchedule& schedule, const RemaskStrategy& strategy, Rng& rng,
                                        double temperature, DiffusionTrace* trace = nullptr);

/// Ancestral left-to-right decoding with one full forward per token.
std::vector<TokenId> generate_ar(const Model& model, std::span<const TokenId> prompt, std::size_t length, Rng& rng,
                                 double temperature);

std::string to_string(ScheduleShape shape);
ScheduleShape parse_schedule_shape(const std::string& s);
RemaskKind parse_remask_kind(const std::string& s);

}  // namespace tdlab
