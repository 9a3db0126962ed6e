#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tdlab/rng.hpp"
#include "tdlab/tensor.hpp"
#include "tdlab/tokens.hpp"

namespace tdlab {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_kv_groups = 2;
  std::size_t d_ffn = 384;
  std::size_t seq_len = 256;
  std::size_t vocab_size = 258;
  bool causal = true;
  double attn_dropout_p = 0.0;
  double mlp_dropout_p = 0.0;
  double rope_base = 1e6;
  double rmsnorm_eps = 1e-6;
  double init_std = 0.02;

  std::size_t head_dim() const { return d_model / n_heads; }
  Vocab vocab() const { return Vocab::for_size(vocab_size); }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Ordered parameter list. Order is fixed by the config and is the serialization order.
using ParameterSet = std::vector<NamedParameter>;

/// Bias-free pre-norm transformer: RMSNorm, rotary GQA attention with per-head QK-norm,
/// SwiGLU MLP, untied output projection. Causality is a mask only; causal and
/// non-causal models share the same parameter layout.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }

  /// tokens: [B, S] with S <= seq_len -> logits [B, S, V].
  /// `rng` is required when training and any dropout probability is non-zero.
  /// `keep_rows`, if non-empty, holds B*S flags; rows with 0 have their input
  /// embedding zeroed (hidden-state token dropout, unscaled).
  Tensor forward(const TokenMatrix& tokens, Rng* rng = nullptr, std::span<const std::uint8_t> keep_rows = {}) const;

  void zero_grad();
  /// Deep copy of parameters (independent storage).
  Model clone() const;

 private:
  Model() = default;

  ModelConfig config_;
  ParameterSet params_;
  bool training_ = true;
};

/// Number of parameters implied by a config (no allocation).
std::size_t parameter_count(const ModelConfig& config);

}  // namespace tdlab
