#include "tdlab/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include "tdlab/corpus.hpp"
#include "tdlab/corruption.hpp"
#include "tdlab/objectives.hpp"
#include "tdlab/optimizer.hpp"
#include "tdlab/oracles.hpp"
#include "tdlab/sampler.hpp"
#include "tdlab/trainer.hpp"

namespace tdlab::checks {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

template <class F>
CheckResult timed(F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = body();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

TokenMatrix random_tokens(std::size_t rows, std::size_t cols, std::size_t n_regular, Rng& rng) {
  TokenMatrix m(rows, cols);
  for (auto& id : m.ids) id = static_cast<TokenId>(rng.below(n_regular));
  return m;
}

/// Neumaier-compensated running sum.
class Neumaier {
 public:
  void add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

ModelConfig tiny_config(std::size_t vocab, std::size_t seq_len, bool causal) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_kv_groups = 1;
  c.d_ffn = 32;
  c.seq_len = seq_len;
  c.vocab_size = vocab;
  c.causal = causal;
  return c;
}

}  // namespace

std::string format(const CheckResult& r) {
  std::ostringstream os;
  os << (r.pass ? "PASS " : "FAIL ") << r.name << " [" << r.tolerance << "] " << r.detail << " (";
  os.precision(2);
  os << std::fixed << r.seconds << " s)";
  return os.str();
}

CheckResult gradient_check(const ModelConfig& base, std::size_t samples_per_tensor) {
  return timed([&] {
    CheckResult r{"gradient_check", true, "max rel err < 1e-4, h = 1e-5, denominator floor 1e-5", "", 0};
    struct Case {
      const char* label;
      ObjectiveKind kind;
      CorruptionSpec spec;
    };
    const Case cases[] = {
        {"ar", ObjectiveKind::ar, CorruptionSpec::none()},
        {"diffusion", ObjectiveKind::diffusion, CorruptionSpec::per_sample()},
        {"hybrid_mask", ObjectiveKind::diffusion_input_ar_loss, CorruptionSpec::per_sample()},
        {"hybrid_hidden", ObjectiveKind::diffusion_input_ar_loss,
         CorruptionSpec::fixed(0.3, CorruptionMode::hidden_zero)},
    };
    std::uint64_t case_id = 0;
    std::size_t n_tensors = 0;
    for (const Case& c : cases) {
      ModelConfig cfg = base;
      cfg.causal = objective_is_causal(c.kind);
      cfg.attn_dropout_p = 0.1;
      cfg.mlp_dropout_p = 0.1;
      cfg.init_std = 0.1;
      Model model(cfg, 11 + case_id);
      model.set_training(true);
      n_tensors = model.parameters().size();
      Rng data_rng = Rng::derive(5, {case_id});
      const TokenMatrix batch = random_tokens(2, 8, cfg.vocab().size - 2, data_rng);
      const std::uint64_t stream = case_id++;
      auto loss_fn = [&] {
        Rng rng = Rng::derive(99, {stream});
        return objective_loss(c.kind, model, batch, c.spec, rng).loss;
      };
      oracle::GradcheckOptions opt;
      opt.samples_per_tensor = samples_per_tensor;
      opt.seed = stream;
      // central differences carry ~1e-10 of roundoff at this loss scale
      opt.denom_floor = 1e-5;
      const auto rep = oracle::gradcheck(c.label, model.parameters(), loss_fn, opt);
      r.pass = r.pass && rep.pass;
      r.detail += std::string(c.label) + ": " + num(rep.max_rel_err) + " over " + std::to_string(rep.samples) +
                  " entries; ";
    }
    r.detail += std::to_string(n_tensors) + " tensors each";
    return r;
  });
}

CheckResult gradient_negative_control() {
  return timed([] {
    Tensor x({4}, {0.3, -1.2, 0.7, 2.0}, true);
    // x^2 with the sign of the derivative flipped
    auto broken_square = [](const Tensor& in) {
      std::vector<double> out(in.numel());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = in.data()[i] * in.data()[i];
      return make_op_output(in.shape(), std::move(out), {in}, "broken_square", [in](std::span<const double> g) {
        std::vector<double> gin(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gin[i] = -2.0 * in.data()[i] * g[i];
        accumulate_grad(in, gin);
      });
    };
    ParameterSet ps{{"x", x}};
    const auto rep = oracle::gradcheck("broken_square", ps, [&] { return sum(broken_square(x)); });
    CheckResult r{"gradient_negative_control", !rep.pass, "injected sign error must exceed 1e-4",
                  "max rel err " + num(rep.max_rel_err) + (rep.pass ? " (not detected)" : " (detected)"), 0};
    return r;
  });
}

CheckResult diffusion_oracle(std::size_t draws) {
  return timed([&] {
    CheckResult r{"diffusion_oracle", true, "|MC - exact| <= 3 SE (+1e-12)", "", 0};
    ModelConfig cfg = tiny_config(5, 6, false);
    cfg.init_std = 0.5;
    Model model(cfg, 3);
    model.set_training(false);
    NoGradScope no_grad;
    const std::vector<TokenId> seq{0, 2, 1, 1, 0, 2};
    const std::size_t chunk = 2000;
    for (double t : {0.25, 0.5, 1.0}) {
      const double exact = oracle::enumerate_diffusion_expectation(model, seq, t);
      // compensated sums: at t = 1 every draw is identical and SE is zero
      Neumaier s, s2;
      std::size_t n = 0;
      for (std::uint64_t c = 0; n < draws; ++c) {
        const std::size_t rows = std::min(chunk, draws - n);
        TokenMatrix batch(rows, seq.size());
        for (std::size_t b = 0; b < rows; ++b) std::copy(seq.begin(), seq.end(), batch.row(b).begin());
        Rng rng = Rng::derive(21, {static_cast<std::uint64_t>(t * 100), c});
        const LossReport rep = diffusion_loss(model, batch, CorruptionSpec::fixed(t), rng);
        for (double v : rep.per_sample_loss) {
          s.add(v);
          s2.add(v * v);
        }
        n += rows;
      }
      const double mean = s.value() / static_cast<double>(n);
      const double var = std::max(0.0, (s2.value() - s.value() * mean) / static_cast<double>(n - 1));
      const double se = std::sqrt(var / static_cast<double>(n));
      const bool ok = std::abs(mean - exact) <= 3.0 * se + 1e-12;
      r.pass = r.pass && ok;
      r.detail += "t=" + num(t) + ": exact " + num(exact) + " mc " + num(mean) + " (" +
                  num(se > 0 ? std::abs(mean - exact) / se : 0.0) + " SE); ";
    }
    r.detail += std::to_string(draws) + " draws per t";
    return r;
  });
}

CheckResult chain_rule() {
  return timed([] {
    CheckResult r{"chain_rule", true, "|ar_loss*(S-1) - oracle| <= 1e-10", "", 0};
    ModelConfig cfg = tiny_config(258, 8, true);
    cfg.init_std = 0.3;
    Model model(cfg, 4);
    model.set_training(false);
    Rng rng(8);
    double worst = 0.0;
    for (int i = 0; i < 8; ++i) {
      const TokenMatrix seq = random_tokens(1, 8, 256, rng);
      Rng unused(0);
      NoGradScope no_grad;
      const double fast = ar_loss(model, seq, unused).value * 7.0;
      worst = std::max(worst, std::abs(fast - oracle::chain_rule_nll(model, seq.ids)));
    }
    r.pass = worst <= 1e-10;
    r.detail = "8 sequences, max abs diff " + num(worst);
    return r;
  });
}

double ks_uniform_statistic(std::vector<double> samples, double lo, double hi) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = std::clamp((samples[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double ks_p_value(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double x = (sn + 0.12 + 0.11 / sn) * d;
  if (x < 0.2) return 1.0;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    p += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

CheckResult masking_statistics() {
  return timed([] {
    CheckResult r{"masking_statistics", true, "fraction within 3*sqrt(0.21/1e5); KS p > 0.01", "", 0};
    const Vocab vocab = Vocab::bytes();
    {
      const TokenMatrix clean(100, 1000, TokenId{65});
      Rng rng(1234);
      const auto out = forward_mask(clean, CorruptionSpec::fixed(0.3), vocab.mask_id(), rng);
      const double frac = static_cast<double>(out.masked_count()) / 1e5;
      const double bound = 3.0 * std::sqrt(0.3 * 0.7 / 1e5);
      const bool ok = std::abs(frac - 0.3) <= bound;
      r.pass = ok;
      r.detail = "fixed 0.3 fraction " + num(frac) + " (bound " + num(bound) + "); ";
    }
    {
      const double t_min = 0.01;
      const TokenMatrix clean(10000, 1, TokenId{65});
      Rng rng(4321);
      const auto out = forward_mask(clean, CorruptionSpec::per_sample(CorruptionMode::input_mask_token, t_min),
                                    vocab.mask_id(), rng);
      const double d = ks_uniform_statistic(out.t, t_min, 1.0);
      const double p = ks_p_value(d, out.t.size());
      r.pass = r.pass && p > 0.01;
      r.detail += "KS D=" + num(d) + " p=" + num(p) + " on 1e4 draws";
    }
    return r;
  });
}

CheckResult dropout_expectation() {
  return timed([] {
    CheckResult r{"dropout_expectation", true, "mean within 3 SE; token-drop survivors bit-identical", "", 0};
    const std::size_t n = 1000000;
    for (double p : {0.1, 0.5}) {
      Rng rng(static_cast<std::uint64_t>(p * 1000));
      const Tensor out = feature_dropout(Tensor::full({n}, 1.0), p, rng);
      double s = 0.0;
      for (double v : out.data()) s += v;
      const double mean = s / static_cast<double>(n);
      const double se = std::sqrt(p / (1.0 - p) / static_cast<double>(n));
      const bool ok = std::abs(mean - 1.0) <= 3.0 * se;
      r.pass = r.pass && ok;
      r.detail += "p=" + num(p) + " mean " + num(mean) + " (" + num(std::abs(mean - 1.0) / se) + " SE); ";
    }
    const std::size_t S = 16, B = 8, d = 32;
    Rng hrng(77);
    std::vector<double> hv(S * B * d);
    for (auto& v : hv) v = hrng.normal();
    const Tensor h({S, B, d}, hv);
    std::size_t dropped = 0, bad = 0;
    for (const CorruptionSpec& spec : {CorruptionSpec::fixed(0.5, CorruptionMode::hidden_zero),
                                       CorruptionSpec::per_sample(CorruptionMode::hidden_zero)}) {
      Rng rng(5);
      const auto [out, indicator] = token_dropout_hidden(h, spec, rng, true);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t off = (s * B + b) * d;
          const bool drop = indicator[b * S + s] != 0;
          dropped += drop;
          for (std::size_t k = 0; k < d; ++k) {
            const double want = drop ? 0.0 : hv[off + k];
            if (std::memcmp(&out.data()[off + k], &want, sizeof want) != 0) ++bad;
          }
        }
    }
    r.pass = r.pass && bad == 0 && dropped > 0;
    r.detail += "token dropout: " + std::to_string(dropped) + " rows dropped, " + std::to_string(bad) +
                " entries differing from unscaled/zero";
    return r;
  });
}

CheckResult adamw_decoupling() {
  return timed([] {
    CheckResult r{"adamw_decoupling", true, "norm ratio = 1 - lr*wd within 1e-14; lambda=0 vs Adam <= 1e-12", "", 0};
    Rng rng(6);
    std::vector<double> init(64);
    for (auto& v : init) v = rng.normal();
    auto norm = [](std::span<const double> x) {
      double s = 0.0;
      for (double v : x) s += v * v;
      return std::sqrt(s);
    };
    {
      OptimizerConfig cfg;
      cfg.lr_peak = 1e-2;
      cfg.warmup_steps = 0;
      cfg.weight_decay = 0.1;
      ParameterSet ps{{"w", Tensor({64}, init, true)}};
      OptimizerState st = OptimizerState::for_parameters(ps);
      const double expect = 1.0 - cfg.lr_peak * cfg.weight_decay;
      double worst = 0.0;
      for (int k = 0; k < 100; ++k) {
        const double before = norm(ps[0].tensor.data());
        ps[0].tensor.zero_grad();
        (void)ps[0].tensor.grad();
        adamw_step(ps, st, cfg);
        worst = std::max(worst, std::abs(norm(ps[0].tensor.data()) / before - expect));
      }
      r.pass = worst <= 1e-14;
      r.detail = "zero-grad contraction max dev " + num(worst) + " over 100 steps; ";
    }
    {
      OptimizerConfig cfg;
      cfg.lr_peak = 1e-2;
      cfg.warmup_steps = 0;
      cfg.weight_decay = 0.0;
      ParameterSet ps{{"w", Tensor({64}, init, true)}};
      OptimizerState st = OptimizerState::for_parameters(ps);
      std::vector<double> theta = init;
      oracle::AdamReference ref(64, cfg.lr_peak, cfg.beta1, cfg.beta2, cfg.eps);
      double worst = 0.0;
      for (int k = 0; k < 100; ++k) {
        std::vector<double> g(64);
        for (auto& v : g) v = rng.normal();
        ps[0].tensor.zero_grad();
        std::copy(g.begin(), g.end(), ps[0].tensor.grad().begin());
        adamw_step(ps, st, cfg);
        ref.step(theta, g);
        for (std::size_t i = 0; i < 64; ++i) worst = std::max(worst, std::abs(theta[i] - ps[0].tensor.data()[i]));
      }
      r.pass = r.pass && worst <= 1e-12;
      r.detail += "lambda=0 vs Adam max abs diff " + num(worst);
    }
    return r;
  });
}

CheckResult sampler_trajectory() {
  return timed([] {
    CheckResult r{"sampler_trajectory", true, "exact masked counts, no MASK left, prompt unchanged", "", 0};
    ModelConfig cfg = tiny_config(258, 72, false);
    cfg.init_std = 0.3;
    Model model(cfg, 9);
    model.set_training(false);
    const std::vector<TokenId> prompt{72, 105, 32};
    std::size_t runs = 0, failures = 0;
    for (ScheduleShape shape : {ScheduleShape::uniform, ScheduleShape::cosine})
      for (std::size_t K : {1, 4, 16})
        for (std::size_t L : {8, 64})
          for (RemaskStrategy strat : {RemaskStrategy{RemaskKind::random, 0},
                                       RemaskStrategy{RemaskKind::low_confidence, 0},
                                       RemaskStrategy{RemaskKind::semi_ar, L / 4}})
            for (double temperature : {0.0, 1.0}) {
              const ReverseSchedule sched = make_schedule(K, shape);
              Rng rng = Rng::derive(10, {K, L, static_cast<std::uint64_t>(strat.kind), runs});
              DiffusionTrace trace;
              const auto out = generate_diffusion(model, prompt, L, sched, strat, rng, temperature, &trace);
              bool ok = trace.masked_counts.size() == K + 1 && out.size() == L;
              for (std::size_t j = 0; ok && j <= K; ++j)
                ok = trace.masked_counts[j] == masked_target(sched.t(K - j), L);
              for (TokenId id : out) ok = ok && !cfg.vocab().is_special(id);
              ok = ok && trace.masked_counts.back() == 0;
              failures += !ok;
              ++runs;
            }
    r.pass = failures == 0;
    r.detail = std::to_string(runs) + " trajectories, " + std::to_string(failures) + " mismatches";
    return r;
  });
}

CheckResult determinism_and_resume(const std::filesystem::path& scratch) {
  return timed([&] {
    CheckResult r{"determinism_and_resume", true, "bit-identical metrics and parameters", "", 0};
    const std::string text = synthetic_corpus(24 * 1024, 3);
    const PackedCorpus corpus = ingest(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), 32, 3);
    TrainRun run;
    run.model = tiny_config(258, 32, true);
    run.objective = ObjectiveKind::diffusion_input_ar_loss;
    run.corruption = CorruptionSpec::per_sample();
    run.model.attn_dropout_p = 0.1;
    run.model.mlp_dropout_p = 0.1;
    run.epochs = 2;
    run.batch_size = 8;
    run.eval_every = 5;
    run.optimizer.warmup_steps = 10;
    run.optimizer.lr_peak = 3e-3;
    run.seed = 7;
    std::filesystem::remove_all(scratch);

    auto same_params = [](const Model& a, const Model& b) {
      const auto& pa = a.parameters();
      const auto& pb = b.parameters();
      if (pa.size() != pb.size()) return false;
      for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].tensor.numel() != pb[i].tensor.numel() ||
            std::memcmp(pa[i].tensor.data().data(), pb[i].tensor.data().data(),
                        pa[i].tensor.numel() * sizeof(double)) != 0)
          return false;
      return true;
    };
    auto same_metrics = [](const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b) {
      if (a.size() != b.size() || a.empty()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (!a[i].same_values(b[i])) return false;
      return true;
    };

    run.out_dir = scratch / "a";
    const TrainResult a = train(run, corpus);
    run.out_dir = scratch / "b";
    const TrainResult b = train(run, corpus);
    const bool rerun_ok = same_metrics(read_metrics(scratch / "a" / "metrics.txt"),
                                       read_metrics(scratch / "b" / "metrics.txt")) &&
                          same_params(*a.model, *b.model);

    // crash after step 20 with the last checkpoint at step 13, then resume
    run.out_dir = scratch / "c";
    run.checkpoint_every = 13;
    TrainOptions stop;
    stop.stop_after_step = 20;
    (void)train(run, corpus, stop);
    TrainOptions resume;
    resume.resume_from = scratch / "c" / "checkpoint.bin";
    const TrainResult c = train(run, corpus, resume);
    const bool resume_ok =
        same_metrics(read_metrics(scratch / "a" / "metrics.txt"), read_metrics(scratch / "c" / "metrics.txt")) &&
        same_params(*a.model, *c.model);

    r.pass = rerun_ok && resume_ok && !a.aborted && a.steps_done == c.steps_done;
    r.detail = std::string("rerun ") + (rerun_ok ? "identical" : "DIFFERS") + ", resume from step 13 " +
               (resume_ok ? "identical" : "DIFFERS") + " over " + std::to_string(a.steps_done) + " steps";
    return r;
  });
}

std::vector<CheckResult> selfcheck_suite(const std::filesystem::path& scratch) {
  ModelConfig grad_cfg;
  grad_cfg.n_layers = 2;
  grad_cfg.d_model = 32;
  grad_cfg.n_heads = 4;
  grad_cfg.n_kv_groups = 2;
  grad_cfg.d_ffn = 96;
  grad_cfg.seq_len = 16;
  return {gradient_check(grad_cfg, 6),
          gradient_negative_control(),
          diffusion_oracle(20000),
          chain_rule(),
          masking_statistics(),
          dropout_expectation(),
          adamw_decoupling(),
          sampler_trajectory(),
          determinism_and_resume(scratch)};
}

}  // namespace tdlab::checks
