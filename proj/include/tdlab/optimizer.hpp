#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tdlab/model.hpp"

namespace tdlab {

struct OptimizerConfig {
  double lr_peak = 3e-4;
  std::size_t warmup_steps = 200;  // 0 disables warmup
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  /// When true, parameters named *norm* and the token embedding are not decayed.
  bool exclude_norms_and_embeddings = false;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

struct OptimizerState {
  std::uint64_t step = 0;  // number of updates applied so far
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  /// Zeroed moments shaped like `params`.
  static OptimizerState for_parameters(const ParameterSet& params);
};

/// lr_peak * min(1, step / warmup_steps) for step >= 1.
double lr_at(std::uint64_t step, const OptimizerConfig& cfg);

struct ClipResult {
  double norm = 0.0;   // global L2 norm before clipping
  double scale = 1.0;  // factor applied to every gradient
};

double global_grad_norm(const ParameterSet& params);

/// Scales all gradients by max_norm / g when the global norm g exceeds max_norm.
/// Throws std::domain_error naming the first parameter holding a non-finite gradient.
ClipResult clip_global_norm(ParameterSet& params, double max_norm);

bool decays(const std::string& param_name, const OptimizerConfig& cfg);

/// One AdamW update with bias correction and decoupled decay:
///   theta <- theta * (1 - lr * lambda) - lr * m_hat / (sqrt(v_hat) + eps)
/// with lr = lr_at(state.step + 1). Gradients are read from the parameter tensors.
void adamw_step(ParameterSet& params, OptimizerState& state, const OptimizerConfig& cfg);

/// Diagnostic: classical coupled L2 step theta <- theta - lr * (grad + lambda * theta).
void sgd_coupled_step(ParameterSet& params, double lr, double weight_decay);

}  // namespace tdlab
