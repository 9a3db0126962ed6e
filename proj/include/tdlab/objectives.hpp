#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tdlab/corruption.hpp"
#include "tdlab/model.hpp"
#include "tdlab/rng.hpp"
#include "tdlab/tensor.hpp"

namespace tdlab {

/// ar: causal next-token NLL. diffusion: non-causal masked denoising with 1/t weight.
/// diffusion_input_ar_loss: corrupted inputs, clean next-token targets (causal).
enum class ObjectiveKind { ar, diffusion, diffusion_input_ar_loss };

std::string to_string(ObjectiveKind kind);
ObjectiveKind parse_objective_kind(const std::string& s);
/// Whether the objective requires a causal model.
bool objective_is_causal(ObjectiveKind kind);

struct LossReport {
  Tensor loss;  // scalar, on the active tape if one is recording
  double value = 0.0;
  std::size_t tokens_counted = 0;
  std::vector<double> per_sample_t;     // diffusion / hybrid only
  std::vector<double> per_sample_loss;  // each row's contribution before the batch mean
};

/// Mean over B*(S-1) terms of -log p(x_s | x_<s). Inputs batch[:, :S-1], targets batch[:, 1:].
LossReport ar_loss(const Model& model, const TokenMatrix& batch, Rng& rng);

/// (1/B) sum_b (1/t_b) sum_i 1[masked] * -log p(x0_i | x_t) / S. Positions are aligned.
LossReport diffusion_loss(const Model& model, const TokenMatrix& batch, const CorruptionSpec& spec, Rng& rng);

/// AR loss on corrupted inputs: inputs = corrupt(batch[:, :S-1]), targets = clean batch[:, 1:].
/// With kind none this is bit-identical to ar_loss.
LossReport hybrid_loss(const Model& model, const TokenMatrix& batch, const CorruptionSpec& spec, Rng& rng);

LossReport objective_loss(ObjectiveKind kind, const Model& model, const TokenMatrix& batch,
                          const CorruptionSpec& spec, Rng& rng);

}  // namespace tdlab
