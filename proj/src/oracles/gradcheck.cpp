#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdlab/oracles.hpp"
#include "tdlab/rng.hpp"

namespace tdlab::oracle {

namespace {

std::vector<std::size_t> pick_entries(std::span<const double> grad, std::size_t want, Rng& rng) {
  std::vector<std::size_t> all(grad.size());
  std::iota(all.begin(), all.end(), 0);
  if (want == 0 || want >= all.size()) return all;
  const auto largest = static_cast<std::size_t>(
      std::max_element(grad.begin(), grad.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) -
      grad.begin());
  std::vector<std::size_t> picked{largest};
  std::swap(all[largest], all.back());
  all.pop_back();
  for (std::size_t i = 0; picked.size() < want; ++i) {
    const std::size_t j = i + rng.below(all.size() - i);
    std::swap(all[i], all[j]);
    picked.push_back(all[i]);
  }
  return picked;
}

}  // namespace

OracleReport gradcheck(const std::string& name, ParameterSet& params, const std::function<Tensor()>& loss_fn,
                       const GradcheckOptions& options) {
  OracleReport report;
  report.name = name;
  report.tolerance = options.tolerance;
  report.tolerance_kind = "rel";

  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());

  NoGradScope no_grad;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].tensor.mutable_data();
    for (std::size_t idx : pick_entries(analytic[pi], options.samples_per_tensor, rng)) {
      const double saved = values[idx];
      values[idx] = saved + options.h;
      const double up = loss_fn().item();
      values[idx] = saved - options.h;
      const double down = loss_fn().item();
      values[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.h);
      const double a = analytic[pi][idx];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), options.denom_floor});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, std::isnan(rel_err) ? INFINITY : rel_err);
      ++report.samples;
    }
  }
  report.pass = report.samples > 0 && report.max_rel_err < options.tolerance;
  return report;
}

}  // namespace tdlab::oracle
