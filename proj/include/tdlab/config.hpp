#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdlab/corpus.hpp"
#include "tdlab/trainer.hpp"

namespace tdlab {

/// Where the training bytes come from. Exactly one of `path` or `synthetic_bytes`.
struct CorpusManifest {
  std::string path;
  std::uint64_t seed = 0;           // split seed
  std::size_t synthetic_bytes = 0;  // > 0: generate text instead of reading `path`
  std::string split_digest;         // filled after ingest; checked when present

  bool operator==(const CorpusManifest&) const = default;
};

struct RunConfig {
  TrainRun run;
  CorpusManifest corpus;
};

/// Parses a run config. Every field has a default; unknown keys and type mismatches
/// throw std::invalid_argument naming the dotted key path.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);
/// Pretty-printed JSON; parse_run_config(echo) reproduces `cfg`.
std::string config_echo(const RunConfig& cfg);

/// Reads or synthesizes the corpus and fills `cfg.corpus.split_digest`
/// (or verifies it if already set).
PackedCorpus load_corpus(RunConfig& cfg);

/// A grid file: {"base": {...}, "runs": [{"name": "...", "set": {...}}, ...]}.
/// Each run is `base` merge-patched with `set`, written to <out_dir>/<name>.
std::vector<RunConfig> parse_grid(const nlohmann::json& grid);

/// The builtin ablation matrix over `base`. The only builtin name is "ablations".
bool is_builtin_grid(const std::string& name);
std::vector<RunConfig> builtin_grid(const RunConfig& base);

}  // namespace tdlab
