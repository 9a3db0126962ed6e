#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tdlab/model.hpp"
#include "tdlab/tensor.hpp"

// Brute-force references for tests and selfcheck. Nothing here calls the fused ops
// it is meant to check; the only shared piece is Model::forward where the oracle is
// about a loss built on top of it.
namespace tdlab::oracle {

struct OracleReport {
  std::string name;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t samples = 0;
  bool pass = false;
  double tolerance = 0.0;
  std::string tolerance_kind;  // what the tolerance bounds, e.g. "rel" or "abs"
};

/// Triple loop [m,k] x [k,n].
std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t m, std::size_t k,
                                 std::size_t n);

/// -log softmax(logits)[target] with a max-shifted log-sum-exp over the whole row.
double naive_cross_entropy(std::span<const double> logits, TokenId target);

/// Sum over t >= 1 of -log p(x_t | x_<t), one forward of the prefix x_<=t-1 per term.
double chain_rule_nll(const Model& model, std::span<const TokenId> sequence);

/// Exact E_mask[(1/t) * sum_masked -log p(x_i | x_masked) / S] by enumerating all
/// 2^S patterns weighted by t^|m| (1-t)^(S-|m|). Requires S <= 8 and t in (0, 1].
double enumerate_diffusion_expectation(const Model& model, std::span<const TokenId> sequence, double t);

/// Textbook Adam with bias correction and no weight decay, one flat parameter vector.
class AdamReference {
 public:
  AdamReference(std::size_t n, double lr, double beta1, double beta2, double eps);
  void step(std::vector<double>& theta, std::span<const double> grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

struct GradcheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, denom_floor).
  double denom_floor = 1e-6;
  /// Entries checked per tensor (largest |grad| first, the rest random); 0 = all.
  std::size_t samples_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Central finite differences against the tape's gradients for every tensor in
/// `params`. `loss_fn` must be deterministic (build its rng inside).
OracleReport gradcheck(const std::string& name, ParameterSet& params, const std::function<Tensor()>& loss_fn,
                       const GradcheckOptions& options = {});

}  // namespace tdlab::oracle
