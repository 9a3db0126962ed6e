#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tdlab/model.hpp"

// Property checks shared by `tdlab selfcheck` and the acceptance suite.
namespace tdlab::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string tolerance;
  std::string detail;
  double seconds = 0.0;
};

/// "PASS name [tolerance] detail (1.2 s)"
std::string format(const CheckResult& r);

/// Central differences against the tape for every parameter tensor of `config`
/// under ar, diffusion, hybrid (mask token) and hybrid (hidden zero), with
/// attention and MLP dropout active under a fixed rng.
CheckResult gradient_check(const ModelConfig& config, std::size_t samples_per_tensor);
/// A deliberately wrong backward rule must be rejected by the same harness.
CheckResult gradient_negative_control();
/// Monte Carlo diffusion loss vs exact mask enumeration, S = 6, V = 5.
CheckResult diffusion_oracle(std::size_t draws);
/// ar_loss * (S - 1) vs truncated forwards on S = 8 sequences.
CheckResult chain_rule();
CheckResult masking_statistics();
CheckResult dropout_expectation();
CheckResult adamw_decoupling();
CheckResult sampler_trajectory();
/// Same-seed reruns and interrupted-then-resumed training, compared bit for bit.
CheckResult determinism_and_resume(const std::filesystem::path& scratch);

/// Kolmogorov-Smirnov statistic of `samples` against Uniform(lo, hi).
double ks_uniform_statistic(std::vector<double> samples, double lo, double hi);
/// P(D_n >= d) under the null, asymptotic Kolmogorov law with Stephens' correction.
double ks_p_value(double d, std::size_t n);

/// The fast suite behind `tdlab selfcheck`.
std::vector<CheckResult> selfcheck_suite(const std::filesystem::path& scratch);

}  // namespace tdlab::checks
