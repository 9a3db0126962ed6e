#include "tdlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tdlab/rng.hpp"

namespace tdlab {

namespace {

constexpr std::uint64_t kTrainStream = 0x7a11;
constexpr std::uint64_t kValStream = 0x7a12;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class TrainingModeGuard {
 public:
  TrainingModeGuard(Model& m, bool on) : model_(m), previous_(m.training()) { m.set_training(on); }
  ~TrainingModeGuard() { model_.set_training(previous_); }

 private:
  Model& model_;
  bool previous_;
};

/// Keeps lines of an existing metrics file up to and including `step`.
void truncate_metrics_after(const std::filesystem::path& path, std::uint64_t step) {
  if (!std::filesystem::exists(path)) return;
  std::vector<std::string> keep;
  {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      try {
        if (MetricsRecord::parse(line).step <= step) keep.push_back(line);
      } catch (const std::exception&) {
        // partial trailing line from an interrupted writer
      }
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

void TrainRun::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument(field + ": " + why);
  };
  model.validate();
  optimizer.validate();
  corruption.validate();
  if (epochs < 1) fail("train.epochs", "must be >= 1");
  if (eval_every < 1) fail("train.eval_every", "must be >= 1");
  if (batch_size < 1) fail("train.batch_size", "must be >= 1");
  if (val_batch_size < 1) fail("train.val_batch_size", "must be >= 1");
  if (model.causal != objective_is_causal(objective))
    fail("model.causal", "objective " + to_string(objective) + " requires a " +
                             (objective_is_causal(objective) ? "causal" : "non-causal") + " model");
  if (objective == ObjectiveKind::diffusion && corruption.kind == CorruptionKind::none)
    fail("corruption.kind", "diffusion objective needs per_sample_uniform or fixed_ratio corruption");
}

// ---------------------------------------------------------------------------

std::string MetricsRecord::to_line() const {
  std::ostringstream os;
  os << "step=" << step << " epoch=" << epoch << " train_loss=" << fmt_double(train_loss)
     << " val_loss=" << fmt_double(val_loss) << " val_acc=" << fmt_double(val_acc) << " lr=" << fmt_double(lr)
     << " grad_norm_preclip=" << fmt_double(grad_norm_preclip) << " wall_ms=" << wall_ms;
  return os.str();
}

MetricsRecord MetricsRecord::parse(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("metrics: malformed field '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("metrics: missing field ") + key);
    return it->second;
  };
  MetricsRecord r;
  r.step = std::stoull(get("step"));
  r.epoch = std::stoull(get("epoch"));
  r.train_loss = std::stod(get("train_loss"));
  r.val_loss = std::stod(get("val_loss"));
  r.val_acc = std::stod(get("val_acc"));
  r.lr = std::stod(get("lr"));
  r.grad_norm_preclip = std::stod(get("grad_norm_preclip"));
  r.wall_ms = std::stoull(get("wall_ms"));
  return r;
}

bool MetricsRecord::same_values(const MetricsRecord& o) const {
  return step == o.step && epoch == o.epoch && train_loss == o.train_loss && val_loss == o.val_loss &&
         val_acc == o.val_acc && lr == o.lr && grad_norm_preclip == o.grad_norm_preclip;
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    try {
      out.push_back(MetricsRecord::parse(line));
    } catch (const std::exception&) {
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> diffusion_validation_grid() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

ValidationResult validate(Model& model, ObjectiveKind objective, const PackedCorpus& corpus, std::uint64_t seed,
                          std::size_t batch_size) {
  const std::size_t n = corpus.validation_size();
  if (n == 0) throw std::invalid_argument("validate: empty validation set");
  if (batch_size == 0) throw std::invalid_argument("validate: batch_size must be >= 1");
  TrainingModeGuard eval_mode(model, false);
  NoGradScope no_grad;
  const std::size_t V = model.config().vocab_size;

  ValidationResult result;
  if (objective != ObjectiveKind::diffusion) {
    double loss_sum = 0.0;
    std::size_t tokens = 0, correct = 0;
    for (std::size_t first = 0; first < n; first += batch_size) {
      const TokenMatrix batch = corpus.validation_batch(first, std::min(batch_size, n - first));
      Rng unused(0);
      const LossReport r = ar_loss(model, batch, unused);
      loss_sum += r.value * static_cast<double>(r.tokens_counted);
      tokens += r.tokens_counted;
      const Tensor logits = model.forward(batch.columns(0, batch.cols - 1));
      const std::size_t T = batch.cols - 1;
      for (std::size_t b = 0; b < batch.rows; ++b)
        for (std::size_t s = 0; s < T; ++s) {
          const double* row = logits.data().data() + (b * T + s) * V;
          const auto arg = static_cast<TokenId>(std::max_element(row, row + V) - row);
          correct += arg == batch.at(b, s + 1);
        }
    }
    result.loss = loss_sum / static_cast<double>(tokens);
    result.accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
    return result;
  }

  const auto grid = diffusion_validation_grid();
  double acc_sum = 0.0;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    double level_loss = 0.0;
    std::size_t masked = 0, correct = 0;
    for (std::size_t first = 0, bi = 0; first < n; first += batch_size, ++bi) {
      const TokenMatrix batch = corpus.validation_batch(first, std::min(batch_size, n - first));
      Rng rng = Rng::derive(seed, {kValStream, gi, bi});
      const CorruptionOutcome c =
          forward_mask(batch, CorruptionSpec::fixed(grid[gi]), model.config().vocab().mask_id(), rng);
      const Tensor logits = model.forward(c.tokens);
      std::vector<double> nll;
      const std::vector<double> w(batch.size(), 1.0);
      softmax_cross_entropy(logits, batch.ids, c.mask, w, &nll);
      for (std::size_t b = 0; b < batch.rows; ++b) {
        double row = 0.0;
        for (std::size_t s = 0; s < batch.cols; ++s) {
          const std::size_t i = b * batch.cols + s;
          if (!c.mask[i]) continue;
          row += nll[i];
          const double* lr = logits.data().data() + i * V;
          correct += static_cast<TokenId>(std::max_element(lr, lr + V) - lr) == batch.ids[i];
          ++masked;
        }
        level_loss += row / (grid[gi] * static_cast<double>(batch.cols));
      }
    }
    result.loss += level_loss / static_cast<double>(n);
    acc_sum += masked ? static_cast<double>(correct) / static_cast<double>(masked) : 0.0;
  }
  result.loss /= static_cast<double>(grid.size());
  result.accuracy = acc_sum / static_cast<double>(grid.size());
  return result;
}

// ---------------------------------------------------------------------------

std::size_t steps_per_epoch(const TrainRun& run, const PackedCorpus& corpus) {
  const std::size_t n = corpus.train_size() / run.batch_size;
  if (n == 0)
    throw std::invalid_argument("train.batch_size: " + std::to_string(run.batch_size) + " exceeds the " +
                                std::to_string(corpus.train_size()) + " training sequences");
  return n;
}

TrainResult train(const TrainRun& run, const PackedCorpus& corpus, const TrainOptions& options) {
  run.validate();
  if (corpus.seq_len > run.model.seq_len)
    throw std::invalid_argument("corpus sequence length " + std::to_string(corpus.seq_len) +
                                " exceeds model.seq_len " + std::to_string(run.model.seq_len));
  if (corpus.vocab.size != run.model.vocab_size)
    throw std::invalid_argument("model.vocab_size: corpus vocabulary has " + std::to_string(corpus.vocab.size) +
                                " entries");

  TrainResult result;
  result.steps_per_epoch = steps_per_epoch(run, corpus);
  const std::uint64_t total_steps = run.epochs * result.steps_per_epoch;

  Model model(run.model, run.seed);
  OptimizerState opt = OptimizerState::for_parameters(model.parameters());
  TrainCursor cursor;
  if (options.resume_from) {
    const Checkpoint ck = load_checkpoint(*options.resume_from);
    ck.restore_parameters(model);
    opt = ck.optimizer_state();
    cursor = ck.cursor;
    result.checkpoint_path = *options.resume_from;
  }

  const bool write = !run.out_dir.empty();
  const std::filesystem::path metrics_path = run.out_dir / "metrics.txt";
  const std::filesystem::path checkpoint_path = run.out_dir / "checkpoint.bin";
  std::ofstream metrics_out;
  if (write) {
    std::filesystem::create_directories(run.out_dir);
    if (options.resume_from) {
      truncate_metrics_after(metrics_path, cursor.step);
      metrics_out.open(metrics_path, std::ios::app);
    } else {
      metrics_out.open(metrics_path, std::ios::trunc);
    }
    if (!metrics_out) throw std::runtime_error("cannot write " + metrics_path.string());
  }

  const auto started = std::chrono::steady_clock::now();
  auto save = [&] {
    if (!write) return;
    save_checkpoint(checkpoint_path, model, opt, cursor, run.config_echo, run.checkpoint_precision);
    result.checkpoint_path = checkpoint_path;
  };

  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> order;
  for (std::uint64_t step = cursor.step + 1; step <= total_steps; ++step) {
    const std::uint64_t epoch = (step - 1) / result.steps_per_epoch;
    const std::uint64_t index = (step - 1) % result.steps_per_epoch;
    if (epoch != cached_epoch) {
      order = epoch_order(corpus, epoch);
      cached_epoch = epoch;
    }
    const TokenMatrix batch = corpus.train_batch(order, index * run.batch_size, run.batch_size);

    model.set_training(true);
    Rng rng = Rng::derive(run.seed, {kTrainStream, step});
    double loss_value = 0.0;
    try {
      Tape tape;
      TapeScope scope(tape);
      const LossReport report = objective_loss(run.objective, model, batch, run.corruption, rng);
      loss_value = report.value;
      if (!std::isfinite(loss_value)) throw std::domain_error("non-finite loss at step " + std::to_string(step));
      model.zero_grad();
      tape.backward(report.loss);
      const ClipResult clip = clip_global_norm(model.parameters(), run.optimizer.clip_norm);
      cursor.last_grad_norm = clip.norm;
      adamw_step(model.parameters(), opt, run.optimizer);
    } catch (const std::domain_error& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      break;
    }
    cursor.step = step;
    cursor.pending_loss_sum += loss_value;
    cursor.pending_loss_count += 1;

    if (step % run.eval_every == 0 || step == total_steps) {
      const ValidationResult val = validate(model, run.objective, corpus, run.seed, run.val_batch_size);
      MetricsRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.train_loss = cursor.pending_loss_sum / static_cast<double>(cursor.pending_loss_count);
      rec.val_loss = val.loss;
      rec.val_acc = val.accuracy;
      rec.lr = lr_at(step, run.optimizer);
      rec.grad_norm_preclip = cursor.last_grad_norm;
      rec.wall_ms = static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count());
      cursor.pending_loss_sum = 0.0;
      cursor.pending_loss_count = 0;
      if (!std::isfinite(rec.val_loss)) {
        result.aborted = true;
        result.abort_reason = "non-finite validation loss at step " + std::to_string(step);
        break;
      }
      if (write) metrics_out << rec.to_line() << '\n' << std::flush;
      result.metrics.push_back(rec);
      if (options.on_record) options.on_record(rec);
    }
    if (run.checkpoint_every > 0 && step % run.checkpoint_every == 0) save();
    result.steps_done = step;
    if (options.stop_after_step != 0 && step >= options.stop_after_step) break;
  }
  result.steps_done = cursor.step;
  if (!result.aborted && (result.steps_done == total_steps || options.stop_after_step == 0)) save();
  model.set_training(false);
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------

GridSummaryRow summarize(const std::string& name, ObjectiveKind objective, const std::vector<MetricsRecord>& metrics) {
  GridSummaryRow row;
  row.name = name;
  row.objective = to_string(objective);
  if (metrics.empty()) {
    row.status = "no-metrics";
    return row;
  }
  row.min_val_loss = metrics.front().val_loss;
  row.step_of_min = metrics.front().step;
  for (const auto& m : metrics)
    if (m.val_loss < row.min_val_loss) {
      row.min_val_loss = m.val_loss;
      row.step_of_min = m.step;
    }
  row.final_val_loss = metrics.back().val_loss;
  row.rise_above_min = row.final_val_loss - row.min_val_loss;
  return row;
}

void write_summary(const std::filesystem::path& path, const std::vector<GridSummaryRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write summary " + path.string());
  out << "name\tobjective\tmin_val_loss\tstep_of_min\tfinal_val_loss\trise_above_min\tstatus\n";
  for (const auto& r : rows)
    out << r.name << '\t' << r.objective << '\t' << fmt_double(r.min_val_loss) << '\t' << r.step_of_min << '\t'
        << fmt_double(r.final_val_loss) << '\t' << fmt_double(r.rise_above_min) << '\t' << r.status << '\n';
}

GridResult run_grid(const std::vector<TrainRun>& runs, const PackedCorpus& corpus, std::size_t jobs,
                    const std::filesystem::path& summary_path) {
  if (runs.empty()) throw std::invalid_argument("run_grid: empty grid");
  std::set<std::string> names;
  for (const auto& r : runs)
    if (!names.insert(r.name).second) throw std::invalid_argument("run_grid: duplicate run name '" + r.name + "'");

  GridResult out;
  out.summary.resize(runs.size());
  out.runs.resize(runs.size());
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= runs.size()) return;
        i = next++;
      }
      try {
        TrainResult r = train(runs[i], corpus);
        GridSummaryRow row = summarize(runs[i].name, runs[i].objective, r.metrics);
        if (r.aborted) row.status = "aborted: " + r.abort_reason;
        out.summary[i] = row;
        out.runs[i] = std::move(r);
      } catch (const std::exception& e) {
        GridSummaryRow row;
        row.name = runs[i].name;
        row.objective = to_string(runs[i].objective);
        row.status = std::string("failed: ") + e.what();
        out.summary[i] = row;
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, runs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (!summary_path.empty()) write_summary(summary_path, out.summary);
  return out;
}

std::vector<TrainRun> ablation_grid(const TrainRun& base) {
  std::vector<TrainRun> runs;
  auto add = [&](std::string name, auto&& edit) {
    TrainRun r = base;
    r.objective = ObjectiveKind::ar;
    r.model.causal = true;
    r.corruption = CorruptionSpec::none();
    r.name = std::move(name);
    edit(r);
    if (!base.out_dir.empty()) r.out_dir = base.out_dir / r.name;
    runs.push_back(std::move(r));
  };
  auto ratio_name = [](const char* prefix, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%.1f", prefix, v);
    return std::string(buf);
  };
  add("ar", [](TrainRun&) {});
  add("diffusion_input", [&](TrainRun& r) {
    r.objective = ObjectiveKind::diffusion_input_ar_loss;
    r.corruption = CorruptionSpec::per_sample(base.corruption.mode, base.corruption.t_min);
  });
  add("full_dlm", [&](TrainRun& r) {
    r.objective = ObjectiveKind::diffusion;
    r.model.causal = false;
    r.corruption = CorruptionSpec::per_sample(base.corruption.mode, base.corruption.t_min);
  });
  for (double p : {0.5, 0.3, 0.1})
    add(ratio_name("token_drop", p), [&](TrainRun& r) {
      r.objective = ObjectiveKind::diffusion_input_ar_loss;
      r.corruption = CorruptionSpec::fixed(p, base.corruption.mode);
    });
  for (double p : {0.1, 0.3, 0.5}) add(ratio_name("attn_dropout", p), [&](TrainRun& r) { r.model.attn_dropout_p = p; });
  for (double p : {0.1, 0.3, 0.5}) add(ratio_name("mlp_dropout", p), [&](TrainRun& r) { r.model.mlp_dropout_p = p; });
  for (double wd : {0.1, 0.3, 0.5})
    add(ratio_name("weight_decay", wd), [&](TrainRun& r) { r.optimizer.weight_decay = wd; });
  return runs;
}

}  // namespace tdlab
