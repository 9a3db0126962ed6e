#include "tdlab/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace tdlab {

void OptimizerConfig::validate() const {
  auto fail = [](const char* field, const char* why) {
    throw std::invalid_argument(std::string("optimizer.") + field + ": " + why);
  };
  if (!(lr_peak > 0.0)) fail("lr_peak", "must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must be in [0, 1)");
  if (!(eps > 0.0)) fail("eps", "must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (!(clip_norm > 0.0)) fail("clip_norm", "must be > 0");
}

OptimizerState OptimizerState::for_parameters(const ParameterSet& params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

double lr_at(std::uint64_t step, const OptimizerConfig& cfg) {
  if (cfg.warmup_steps == 0) return cfg.lr_peak;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  return cfg.lr_peak * std::min(1.0, frac);
}

double global_grad_norm(const ParameterSet& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

ClipResult clip_global_norm(ParameterSet& params, double max_norm) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad())
      if (!std::isfinite(g)) throw std::domain_error("clip_global_norm: non-finite gradient in " + p.name);
  }
  ClipResult r;
  r.norm = global_grad_norm(params);
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.grad()) g *= r.scale;
    }
  }
  return r;
}

bool decays(const std::string& name, const OptimizerConfig& cfg) {
  if (!cfg.exclude_norms_and_embeddings) return true;
  return name.find("norm") == std::string::npos && name != "tok_embed";
}

void adamw_step(ParameterSet& params, OptimizerState& state, const OptimizerConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adamw_step: optimizer state has " + std::to_string(state.m.size()) +
                                " buffers for " + std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].tensor.numel() || state.v[i].size() != params[i].tensor.numel())
      throw std::invalid_argument("adamw_step: moment shape mismatch for " + params[i].name);

  const std::uint64_t t = ++state.step;
  const double lr = lr_at(t, cfg);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    std::span<double> theta = p.mutable_data();
    std::span<const double> g = std::as_const(p).grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const double decay = decays(params[i].name, cfg) ? 1.0 - lr * cfg.weight_decay : 1.0;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] = theta[j] * decay - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

void sgd_coupled_step(ParameterSet& params, double lr, double weight_decay) {
  for (auto& p : params) {
    std::span<double> theta = p.tensor.mutable_data();
    std::span<const double> g = std::as_const(p.tensor).grad();
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= lr * (g[j] + weight_decay * theta[j]);
  }
}

}  // namespace tdlab
