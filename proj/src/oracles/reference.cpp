#include <cmath>
#include <limits>
#include <stdexcept>

#include "tdlab/oracles.hpp"

namespace tdlab::oracle {

std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t m, std::size_t k,
                                 std::size_t n) {
  if (a.size() != m * k || b.size() != k * n) throw std::invalid_argument("naive_matmul: size mismatch");
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

double naive_cross_entropy(std::span<const double> logits, TokenId target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
    throw std::invalid_argument("naive_cross_entropy: target out of range");
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) mx = std::max(mx, x);
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  return mx + std::log(z) - logits[static_cast<std::size_t>(target)];
}

double chain_rule_nll(const Model& model, std::span<const TokenId> sequence) {
  if (!model.config().causal) throw std::invalid_argument("chain_rule_nll: requires a causal model");
  NoGradScope no_grad;
  const std::size_t V = model.config().vocab_size;
  double total = 0.0;
  for (std::size_t t = 1; t < sequence.size(); ++t) {
    const std::vector<TokenId> prefix(sequence.begin(), sequence.begin() + static_cast<std::ptrdiff_t>(t));
    const Tensor logits = model.forward(TokenMatrix(1, t, prefix));
    total += naive_cross_entropy(logits.data().subspan((t - 1) * V, V), sequence[t]);
  }
  return total;
}

double enumerate_diffusion_expectation(const Model& model, std::span<const TokenId> sequence, double t) {
  const std::size_t S = sequence.size();
  if (S == 0 || S > 8) throw std::invalid_argument("enumerate_diffusion_expectation: need 1 <= S <= 8");
  if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("enumerate_diffusion_expectation: t must be in (0, 1]");
  NoGradScope no_grad;
  const std::size_t V = model.config().vocab_size;
  const TokenId mask_id = model.config().vocab().mask_id();
  double expectation = 0.0;
  for (std::uint32_t pattern = 0; pattern < (1u << S); ++pattern) {
    const int n_masked = __builtin_popcount(pattern);
    const double prob = std::pow(t, n_masked) * std::pow(1.0 - t, static_cast<double>(S) - n_masked);
    if (prob == 0.0 || n_masked == 0) continue;
    std::vector<TokenId> noisy(sequence.begin(), sequence.end());
    for (std::size_t i = 0; i < S; ++i)
      if (pattern >> i & 1u) noisy[i] = mask_id;
    const Tensor logits = model.forward(TokenMatrix(1, S, noisy));
    double ce = 0.0;
    for (std::size_t i = 0; i < S; ++i)
      if (pattern >> i & 1u) ce += naive_cross_entropy(logits.data().subspan(i * V, V), sequence[i]);
    expectation += prob * ce / (t * static_cast<double>(S));
  }
  return expectation;
}

AdamReference::AdamReference(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void AdamReference::step(std::vector<double>& theta, std::span<const double> grad) {
  if (theta.size() != m_.size() || grad.size() != m_.size()) throw std::invalid_argument("AdamReference: size");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace tdlab::oracle
