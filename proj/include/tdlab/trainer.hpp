#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tdlab/checkpoint.hpp"
#include "tdlab/corpus.hpp"
#include "tdlab/corruption.hpp"
#include "tdlab/model.hpp"
#include "tdlab/objectives.hpp"
#include "tdlab/optimizer.hpp"

namespace tdlab {

struct TrainRun {
  std::string name = "run";
  ObjectiveKind objective = ObjectiveKind::ar;
  CorruptionSpec corruption;
  ModelConfig model;
  OptimizerConfig optimizer;
  std::size_t epochs = 120;
  std::size_t batch_size = 16;
  std::size_t eval_every = 50;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;    // empty: nothing is written to disk
  std::size_t checkpoint_every = 0;  // in steps; 0 writes only the final checkpoint
  CheckpointPrecision checkpoint_precision = CheckpointPrecision::f64;
  std::size_t val_batch_size = 16;
  std::string config_echo;  // stored verbatim inside checkpoints

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// One line of the metrics stream.
struct MetricsRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double train_loss = 0.0;  // mean training loss since the previous record, nats/token
  double val_loss = 0.0;    // nats/token
  double val_acc = 0.0;     // held-out next-byte (or masked-byte) accuracy
  double lr = 0.0;
  double grad_norm_preclip = 0.0;
  std::uint64_t wall_ms = 0;

  /// "step=.. epoch=.. train_loss=.. ..." with doubles printed round-trip exact.
  std::string to_line() const;
  static MetricsRecord parse(const std::string& line);
  /// Same record ignoring wall_ms, the only non-deterministic field.
  bool same_values(const MetricsRecord& other) const;
};

struct ValidationResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Inference-mode validation. AR and hybrid objectives: clean-input next-token NLL.
/// Diffusion: masked CE (1/t weighted, per token) averaged over t in {0.1, ..., 0.9}
/// with mask draws seeded by (seed, grid index, batch index).
ValidationResult validate(Model& model, ObjectiveKind objective, const PackedCorpus& corpus, std::uint64_t seed,
                          std::size_t batch_size = 16);

/// The fixed corruption grid used by diffusion validation.
std::vector<double> diffusion_validation_grid();

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  /// Stop (as if interrupted) once this global step has completed; 0 = run to the end.
  std::uint64_t stop_after_step = 0;
  /// Called for every metrics record, after it is written.
  std::function<void(const MetricsRecord&)> on_record;
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  std::uint64_t steps_done = 0;
  std::uint64_t steps_per_epoch = 0;
  bool aborted = false;
  std::string abort_reason;
  std::filesystem::path checkpoint_path;  // last checkpoint written (may be empty)
  std::optional<Model> model;
};

std::size_t steps_per_epoch(const TrainRun& run, const PackedCorpus& corpus);

/// Multi-epoch loop: per step corrupt -> forward -> loss -> backward -> clip -> AdamW.
/// A non-finite loss or gradient aborts the run; the last checkpoint on disk is kept.
TrainResult train(const TrainRun& run, const PackedCorpus& corpus, const TrainOptions& options = {});

/// Reads a metrics file, one record per line; lines that fail to parse are skipped.
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

struct GridSummaryRow {
  std::string name;
  std::string objective;
  double min_val_loss = 0.0;
  std::uint64_t step_of_min = 0;
  double final_val_loss = 0.0;
  double rise_above_min = 0.0;  // final - min
  std::string status = "ok";
};

GridSummaryRow summarize(const std::string& name, ObjectiveKind objective, const std::vector<MetricsRecord>& metrics);

struct GridResult {
  std::vector<GridSummaryRow> summary;
  std::vector<TrainResult> runs;
};

/// Runs every cell (up to `jobs` concurrently), each into out_dir/<name>, and writes
/// a tab-separated summary to `summary_path` if non-empty. Duplicate names are rejected;
/// a failing cell is recorded in the summary and does not stop the others.
GridResult run_grid(const std::vector<TrainRun>& runs, const PackedCorpus& corpus, std::size_t jobs = 1,
                    const std::filesystem::path& summary_path = {});

void write_summary(const std::filesystem::path& path, const std::vector<GridSummaryRow>& rows);

/// The desk-scale ablation matrix: AR / diffusion-style input / full DLM, token-drop
/// ratios 0.1/0.3/0.5, attention dropout, MLP dropout and weight decay at 0.1/0.3/0.5.
/// 15 named runs derived from `base` (an AR run).
std::vector<TrainRun> ablation_grid(const TrainRun& base);

}  // namespace tdlab
