#include "tdlab/objectives.hpp"

#include <stdexcept>

namespace tdlab {

namespace {

void require_causal(const Model& model, bool causal, const char* op) {
  if (model.config().causal != causal)
    throw std::invalid_argument(std::string(op) + ": requires a " + (causal ? "causal" : "non-causal") + " model");
}

/// Next-token loss of `logits` ([B, S-1, V]) against clean batch[:, 1:], averaged over all targets.
LossReport next_token_loss(const Tensor& logits, const TokenMatrix& batch) {
  const std::size_t B = batch.rows, T = batch.cols - 1;
  const TokenMatrix targets = batch.columns(1, batch.cols);
  const std::vector<std::uint8_t> mask(B * T, 1);
  const std::vector<double> weights(B * T, 1.0 / static_cast<double>(B * T));
  std::vector<double> nll;
  LossReport r;
  r.loss = softmax_cross_entropy(logits, targets.ids, mask, weights, &nll);
  r.value = r.loss.item();
  r.tokens_counted = B * T;
  r.per_sample_loss.assign(B, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < T; ++s) r.per_sample_loss[b] += nll[b * T + s] / static_cast<double>(T);
  return r;
}

void require_sequence(const TokenMatrix& batch, std::size_t min_cols, const char* op) {
  if (batch.rows == 0 || batch.cols < min_cols)
    throw std::invalid_argument(std::string(op) + ": batch must have >= 1 row and >= " + std::to_string(min_cols) +
                                " columns");
}

}  // namespace

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::ar: return "ar";
    case ObjectiveKind::diffusion: return "diffusion";
    case ObjectiveKind::diffusion_input_ar_loss: return "diffusion_input_ar_loss";
  }
  return "?";
}

ObjectiveKind parse_objective_kind(const std::string& s) {
  if (s == "ar") return ObjectiveKind::ar;
  if (s == "diffusion") return ObjectiveKind::diffusion;
  if (s == "diffusion_input_ar_loss") return ObjectiveKind::diffusion_input_ar_loss;
  throw std::invalid_argument("objective: unknown value '" + s + "'");
}

bool objective_is_causal(ObjectiveKind kind) { return kind != ObjectiveKind::diffusion; }

LossReport ar_loss(const Model& model, const TokenMatrix& batch, Rng& rng) {
  require_causal(model, true, "ar_loss");
  require_sequence(batch, 2, "ar_loss");
  const Tensor logits = model.forward(batch.columns(0, batch.cols - 1), &rng);
  return next_token_loss(logits, batch);
}

LossReport hybrid_loss(const Model& model, const TokenMatrix& batch, const CorruptionSpec& spec, Rng& rng) {
  require_causal(model, true, "hybrid_loss");
  require_sequence(batch, 2, "hybrid_loss");
  const TokenMatrix inputs = batch.columns(0, batch.cols - 1);
  const CorruptionOutcome c = forward_mask(inputs, spec, model.config().vocab().mask_id(), rng);
  std::vector<std::uint8_t> keep;
  if (spec.mode == CorruptionMode::hidden_zero && spec.kind != CorruptionKind::none) keep = c.keep_rows();
  const Tensor logits = model.forward(c.tokens, &rng, keep);
  LossReport r = next_token_loss(logits, batch);
  if (spec.kind != CorruptionKind::none) r.per_sample_t = c.t;
  return r;
}

LossReport diffusion_loss(const Model& model, const TokenMatrix& batch, const CorruptionSpec& spec, Rng& rng) {
  require_causal(model, false, "diffusion_loss");
  require_sequence(batch, 1, "diffusion_loss");
  if (spec.kind == CorruptionKind::none)
    throw std::invalid_argument("diffusion_loss: corruption kind must be per_sample_uniform or fixed_ratio");
  const std::size_t B = batch.rows, S = batch.cols;
  const CorruptionOutcome c = forward_mask(batch, spec, model.config().vocab().mask_id(), rng);
  std::vector<std::uint8_t> keep;
  if (spec.mode == CorruptionMode::hidden_zero) keep = c.keep_rows();
  const Tensor logits = model.forward(c.tokens, &rng, keep);

  std::vector<double> weights(B * S, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    if (c.t[b] <= 0.0) continue;  // nothing can be masked in this row
    const double w = 1.0 / (c.t[b] * static_cast<double>(S) * static_cast<double>(B));
    for (std::size_t s = 0; s < S; ++s) weights[b * S + s] = w;
  }
  std::vector<double> nll;
  LossReport r;
  r.loss = softmax_cross_entropy(logits, batch.ids, c.mask, weights, &nll);
  r.value = r.loss.item();
  r.tokens_counted = c.masked_count();
  r.per_sample_t = c.t;
  r.per_sample_loss.assign(B, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    if (c.t[b] <= 0.0) continue;
    for (std::size_t s = 0; s < S; ++s) r.per_sample_loss[b] += nll[b * S + s];
    r.per_sample_loss[b] /= c.t[b] * static_cast<double>(S);
  }
  return r;
}

LossReport objective_loss(ObjectiveKind kind, const Model& model, const TokenMatrix& batch,
                          const CorruptionSpec& spec, Rng& rng) {
  switch (kind) {
    case ObjectiveKind::ar: return ar_loss(model, batch, rng);
    case ObjectiveKind::diffusion: return diffusion_loss(model, batch, spec, rng);
    case ObjectiveKind::diffusion_input_ar_loss: return hybrid_loss(model, batch, spec, rng);
  }
  throw std::logic_error("objective_loss: unknown objective");
}

}  // namespace tdlab
