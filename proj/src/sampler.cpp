#include "tdlab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace tdlab {

namespace {

struct Draw {
  TokenId token;
  double confidence;  // model probability of the drawn token
};

/// Samples from logits excluding MASK/PAD; argmax (lowest id on ties) when temperature is 0.
Draw sample_position(std::span<const double> logits, const Vocab& vocab, double temperature, Rng& rng) {
  const std::size_t V = logits.size();
  double mx = -std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  for (std::size_t c = 0; c < V; ++c) {
    if (vocab.is_special(static_cast<TokenId>(c))) continue;
    if (logits[c] > mx) {
      mx = logits[c];
      best = c;
    }
  }
  double z = 0.0;
  for (std::size_t c = 0; c < V; ++c)
    if (!vocab.is_special(static_cast<TokenId>(c))) z += std::exp(logits[c] - mx);

  std::size_t chosen = best;
  if (temperature > 0.0) {
    std::vector<double> w(V, 0.0);
    double total = 0.0;
    for (std::size_t c = 0; c < V; ++c)
      if (!vocab.is_special(static_cast<TokenId>(c))) total += (w[c] = std::exp((logits[c] - mx) / temperature));
    double u = rng.uniform() * total;
    chosen = best;
    for (std::size_t c = 0; c < V; ++c) {
      if (w[c] == 0.0) continue;
      chosen = c;
      if ((u -= w[c]) < 0.0) break;
    }
  }
  return {static_cast<TokenId>(chosen), std::exp(logits[chosen] - mx) / z};
}

void require_inference(const Model& model, const char* op) {
  if (model.training()) throw std::logic_error(std::string(op) + ": model must be in inference mode");
}

void require_fits(const Model& model, std::size_t prompt_len, std::size_t length, const char* op) {
  if (length == 0) throw std::invalid_argument(std::string(op) + ": generation length must be >= 1");
  if (prompt_len + length > model.config().seq_len)
    throw std::invalid_argument(std::string(op) + ": prompt (" + std::to_string(prompt_len) + ") + length (" +
                                std::to_string(length) + ") exceeds model seq_len " +
                                std::to_string(model.config().seq_len));
}

}  // namespace

ReverseSchedule make_schedule(std::size_t steps, ScheduleShape shape) {
  if (steps < 1) throw std::invalid_argument("make_schedule: K must be >= 1");
  ReverseSchedule s{steps, std::vector<double>(steps + 1), shape};
  const double K = static_cast<double>(steps);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double kk = static_cast<double>(k);
    s.levels[k] = shape == ScheduleShape::uniform ? kk / K : std::cos(std::numbers::pi / 2.0 * (K - kk) / K);
  }
  s.levels[0] = 0.0;
  s.levels[steps] = 1.0;
  return s;
}

std::size_t GenState::masked_count() const {
  std::size_t n = 0;
  for (auto m : masked) n += m;
  return n;
}

GenState initial_state(std::span<const TokenId> prompt, std::size_t length, TokenId mask_id) {
  GenState s;
  s.tokens.assign(prompt.begin(), prompt.end());
  s.tokens.resize(prompt.size() + length, mask_id);
  s.masked.assign(prompt.size() + length, 0);
  std::fill(s.masked.begin() + static_cast<std::ptrdiff_t>(prompt.size()), s.masked.end(), 1);
  s.prompt_len = prompt.size();
  return s;
}

std::size_t masked_target(double t, std::size_t length) {
  return static_cast<std::size_t>(std::llround(t * static_cast<double>(length)));
}

GenState reverse_step(const Model& model, const GenState& state, double t_k, double t_km1,
                      const RemaskStrategy& strategy, Rng& rng, double temperature) {
  if (!(t_km1 < t_k)) throw std::invalid_argument("reverse_step: need t_{k-1} < t_k");
  if (model.config().causal) throw std::invalid_argument("reverse_step: requires a non-causal model");
  require_inference(model, "reverse_step");
  const std::size_t L = state.gen_len(), P = state.prompt_len;
  if (state.masked_count() != masked_target(t_k, L))
    throw std::logic_error("reverse_step: state has " + std::to_string(state.masked_count()) +
                           " masked positions, level t_k implies " + std::to_string(masked_target(t_k, L)));
  if (strategy.kind == RemaskKind::semi_ar && (strategy.block_len == 0 || L % strategy.block_len != 0))
    throw std::invalid_argument("reverse_step: semi_ar block_len must divide the generation length");

  const Vocab vocab = model.config().vocab();
  GenState next = state;
  next.step_k = state.step_k == 0 ? 0 : state.step_k - 1;

  // (a) predict and fill every masked position
  std::vector<std::size_t> filled;
  std::vector<double> confidence(state.tokens.size(), 0.0);
  if (state.masked_count() > 0) {
    const TokenMatrix input(1, state.tokens.size(), state.tokens);
    const Tensor logits = model.forward(input);
    const std::size_t V = model.config().vocab_size;
    for (std::size_t i = P; i < state.tokens.size(); ++i) {
      if (!state.masked[i]) continue;
      const Draw d = sample_position(logits.data().subspan(i * V, V), vocab, temperature, rng);
      next.tokens[i] = d.token;
      next.masked[i] = 0;
      confidence[i] = d.confidence;
      filled.push_back(i);
    }
  }

  // (b) remask so that exactly round(t_{k-1} * L) positions stay masked
  const std::size_t n_out = masked_target(t_km1, L);
  std::vector<std::size_t> remask;
  auto by_confidence = [&](std::size_t a, std::size_t b) {
    if (confidence[a] != confidence[b]) return confidence[a] > confidence[b];
    return a < b;
  };
  switch (strategy.kind) {
    case RemaskKind::random: {
      std::vector<std::size_t> pool = filled;
      for (std::size_t i = 0; i < n_out; ++i) {
        const std::size_t j = i + rng.below(pool.size() - i);
        std::swap(pool[i], pool[j]);
      }
      remask.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_out));
      break;
    }
    case RemaskKind::low_confidence: {
      std::vector<std::size_t> ranked = filled;
      std::stable_sort(ranked.begin(), ranked.end(), by_confidence);
      remask.assign(ranked.end() - static_cast<std::ptrdiff_t>(n_out), ranked.end());
      break;
    }
    case RemaskKind::semi_ar: {
      const std::size_t kept = L - n_out;
      const std::size_t frontier = kept / strategy.block_len;
      const std::size_t partial = kept % strategy.block_len;
      const std::size_t block_begin = P + frontier * strategy.block_len;
      const std::size_t block_end = std::min(P + L, block_begin + strategy.block_len);
      std::vector<std::size_t> candidates;
      std::size_t already = 0;
      for (std::size_t i = block_begin; i < block_end; ++i) {
        if (state.masked[i]) candidates.push_back(i);
        else ++already;
      }
      if (already > partial && frontier * strategy.block_len < L)
        throw std::logic_error("reverse_step: semi_ar state has unmasked positions beyond the frontier");
      std::stable_sort(candidates.begin(), candidates.end(), by_confidence);
      const std::size_t keep_here = partial - std::min(partial, already);
      remask.assign(candidates.begin() + static_cast<std::ptrdiff_t>(std::min(keep_here, candidates.size())),
                    candidates.end());
      for (std::size_t i = block_end; i < P + L; ++i) remask.push_back(i);
      break;
    }
  }
  if (remask.size() != n_out) throw std::logic_error("reverse_step: remask budget mismatch");
  for (std::size_t i : remask) {
    next.tokens[i] = vocab.mask_id();
    next.masked[i] = 1;
  }
  return next;
}

std::vector<TokenId> generate_diffusion(const Model& model, std::span<const TokenId> prompt, std::size_t length,
                                        const ReverseSchedule& schedule, const RemaskStrategy& strategy, Rng& rng,
                                        double temperature, DiffusionTrace* trace) {
  if (model.config().causal) throw std::invalid_argument("generate_diffusion: requires a non-causal model");
  require_inference(model, "generate_diffusion");
  require_fits(model, prompt.size(), length, "generate_diffusion");
  const Vocab vocab = model.config().vocab();
  for (TokenId id : prompt)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size || id == vocab.mask_id())
      throw std::invalid_argument("generate_diffusion: invalid prompt token " + std::to_string(id));

  GenState state = initial_state(prompt, length, vocab.mask_id());
  state.step_k = schedule.steps;
  if (trace) trace->masked_counts = {state.masked_count()};
  for (std::size_t k = schedule.steps; k >= 1; --k) {
    state = reverse_step(model, state, schedule.t(k), schedule.t(k - 1), strategy, rng, temperature);
    if (trace) trace->masked_counts.push_back(state.masked_count());
  }
  return {state.tokens.begin() + static_cast<std::ptrdiff_t>(state.prompt_len), state.tokens.end()};
}

std::vector<TokenId> generate_ar(const Model& model, std::span<const TokenId> prompt, std::size_t length, Rng& rng,
                                 double temperature) {
  if (!model.config().causal) throw std::invalid_argument("generate_ar: requires a causal model");
  require_inference(model, "generate_ar");
  require_fits(model, prompt.size(), length, "generate_ar");
  if (prompt.empty()) throw std::invalid_argument("generate_ar: prompt must contain at least one token");
  const Vocab vocab = model.config().vocab();
  const std::size_t V = model.config().vocab_size;
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  for (std::size_t i = 0; i < length; ++i) {
    const Tensor logits = model.forward(TokenMatrix(1, seq.size(), seq));
    seq.push_back(sample_position(logits.data().subspan((seq.size() - 1) * V, V), vocab, temperature, rng).token);
  }
  return {seq.begin() + static_cast<std::ptrdiff_t>(prompt.size()), seq.end()};
}

std::string to_string(ScheduleShape shape) { return shape == ScheduleShape::uniform ? "uniform" : "cosine"; }

ScheduleShape parse_schedule_shape(const std::string& s) {
  if (s == "uniform") return ScheduleShape::uniform;
  if (s == "cosine") return ScheduleShape::cosine;
  throw std::invalid_argument("schedule: unknown shape '" + s + "'");
}

RemaskKind parse_remask_kind(const std::string& s) {
  if (s == "random") return RemaskKind::random;
  if (s == "low_confidence") return RemaskKind::low_confidence;
  if (s == "semi_ar") return RemaskKind::semi_ar;
  throw std::invalid_argument("strategy: unknown remasking strategy '" + s + "'");
}

}  // namespace tdlab
