#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tdlab/model.hpp"
#include "tdlab/optimizer.hpp"

namespace tdlab {

enum class CheckpointPrecision { f32, f64 };

std::string to_string(CheckpointPrecision p);
CheckpointPrecision parse_checkpoint_precision(const std::string& s);

/// Where a run stands, beyond parameters and moments, so a resumed run reproduces
/// the uninterrupted metrics stream.
struct TrainCursor {
  std::uint64_t step = 0;
  double pending_loss_sum = 0.0;  // train losses since the last metrics record
  std::uint64_t pending_loss_count = 0;
  double last_grad_norm = 0.0;
};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  CheckpointPrecision precision = CheckpointPrecision::f64;
  TrainCursor cursor;
  std::vector<CheckpointTensor> params;
  std::vector<CheckpointTensor> first_moment;
  std::vector<CheckpointTensor> second_moment;
  std::string config_echo;

  /// Copies parameter values into `model` (names and shapes must match).
  void restore_parameters(Model& model) const;
  OptimizerState optimizer_state() const;
};

/// File layout:
///   "TDLAB1\0" magic (7 bytes)
///   u64 LE manifest length, manifest text (one header or tensor entry per line)
///   tensor data, little-endian f32 or f64 per the manifest's precision line,
///     parameters then first moments then second moments
///   u64 LE config length, config echo text
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState& state,
                     const TrainCursor& cursor, const std::string& config_echo,
                     CheckpointPrecision precision = CheckpointPrecision::f64);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tdlab
