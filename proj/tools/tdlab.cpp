// tdlab command-line entry point.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "tdlab/checks.hpp"
#include "tdlab/config.hpp"
#include "tdlab/sampler.hpp"
#include "tdlab/trainer.hpp"

namespace {

using namespace tdlab;

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::size_t threads = 1;
  std::size_t jobs = 1;
};

/// --out-dir beats TDLAB_OUT, which beats the config file.
void apply_overrides(RunConfig& cfg, const GlobalFlags& g) {
  if (g.seed) cfg.run.seed = *g.seed;
  if (!g.out_dir.empty()) {
    cfg.run.out_dir = g.out_dir;
  } else if (const char* env = std::getenv("TDLAB_OUT"); env && *env) {
    cfg.run.out_dir = env;
  }
  if (cfg.run.out_dir.empty()) cfg.run.out_dir = std::filesystem::path("runs") / cfg.run.name;
  cfg.run.config_echo = config_echo(cfg);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int cmd_train(const GlobalFlags& g, const std::string& config_path, const std::string& resume) {
  RunConfig cfg = load_run_config(config_path);
  apply_overrides(cfg, g);
  const PackedCorpus corpus = load_corpus(cfg);
  write_text(cfg.run.out_dir / "config.json", cfg.run.config_echo);
  std::cerr << "tdlab: " << cfg.run.name << " objective=" << to_string(cfg.run.objective) << " params="
            << parameter_count(cfg.run.model) << " train_seqs=" << corpus.train_size()
            << " val_seqs=" << corpus.validation_size() << " steps/epoch=" << steps_per_epoch(cfg.run, corpus)
            << " out=" << cfg.run.out_dir.string() << "\n";
  TrainOptions opts;
  if (!resume.empty()) opts.resume_from = resume;
  opts.on_record = [](const MetricsRecord& m) { std::cerr << m.to_line() << "\n"; };
  const TrainResult r = train(cfg.run, corpus, opts);
  if (r.aborted) {
    std::cerr << "tdlab: run aborted: " << r.abort_reason << "; last checkpoint: "
              << (r.checkpoint_path.empty() ? "none" : r.checkpoint_path.string()) << "\n";
    return 3;
  }
  std::cerr << "tdlab: done, " << r.steps_done << " steps, checkpoint " << r.checkpoint_path.string() << "\n";
  return 0;
}

int cmd_ablate(const GlobalFlags& g, const std::string& grid_arg, const std::string& config_path) {
  std::vector<RunConfig> cells;
  RunConfig base;
  if (!config_path.empty()) {
    base = load_run_config(config_path);
  } else {
    base = parse_run_config(nlohmann::json{{"corpus", {{"synthetic_bytes", 1 << 20}}}});
  }
  apply_overrides(base, g);
  if (is_builtin_grid(grid_arg)) {
    base.run.name = "ablations";
    cells = builtin_grid(base);
  } else {
    std::ifstream in(grid_arg);
    if (!in) throw std::invalid_argument("--grid: cannot open " + grid_arg);
    nlohmann::json grid = nlohmann::json::parse(in);
    if (!config_path.empty() && !grid.contains("base")) grid["base"] = to_json(base);
    if (!grid.contains("base")) grid["base"] = nlohmann::json::object();
    if (grid["base"].is_object() && !grid["base"].contains("out_dir")) grid["base"]["out_dir"] = base.run.out_dir.string();
    if (grid["base"].is_object() && g.seed) grid["base"]["seed"] = *g.seed;
    cells = parse_grid(grid);
  }
  if (cells.empty()) throw std::invalid_argument("--grid: grid is empty");

  RunConfig corpus_cfg = cells.front();
  const PackedCorpus corpus = load_corpus(corpus_cfg);
  std::vector<TrainRun> runs;
  for (auto& c : cells) {
    if (c.corpus.path != corpus_cfg.corpus.path || c.corpus.seed != corpus_cfg.corpus.seed ||
        c.corpus.synthetic_bytes != corpus_cfg.corpus.synthetic_bytes || c.run.model.seq_len != corpus_cfg.run.model.seq_len)
      throw std::invalid_argument("grid: all cells must share corpus and model.seq_len (cell " + c.run.name + ")");
    c.corpus.split_digest = corpus_cfg.corpus.split_digest;
    c.run.config_echo = config_echo(c);
    write_text(c.run.out_dir / "config.json", c.run.config_echo);
    runs.push_back(c.run);
  }
  const std::filesystem::path summary = base.run.out_dir / "summary.tsv";
  std::cerr << "tdlab: " << runs.size() << " runs, jobs=" << g.jobs << ", summary " << summary.string() << "\n";
  const GridResult result = run_grid(runs, corpus, g.jobs, summary);
  bool all_ok = true;
  for (const auto& row : result.summary) {
    std::cout << row.name << "\t" << row.min_val_loss << "\t" << row.step_of_min << "\t" << row.final_val_loss << "\t"
              << row.status << "\n";
    all_ok = all_ok && row.status == "ok";
  }
  return all_ok ? 0 : 4;
}

std::string parse_hex(const std::string& hex) {
  if (hex.size() % 2) throw std::invalid_argument("--prompt-hex: odd number of hex digits");
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2) out.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  return out;
}

struct SampleArgs {
  std::string checkpoint;
  std::string prompt;
  std::string prompt_hex;
  std::size_t length = 64;
  std::size_t steps = 64;
  std::string schedule = "uniform";
  std::string strategy = "low_confidence";
  std::size_t block_len = 0;
  double temperature = 0.0;
  std::string output;
};

Model model_from_checkpoint(const std::string& path, RunConfig* cfg_out) {
  const Checkpoint ck = load_checkpoint(path);
  RunConfig cfg = parse_run_config(nlohmann::json::parse(ck.config_echo));
  Model model(cfg.run.model, cfg.run.seed);
  ck.restore_parameters(model);
  model.set_training(false);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

int cmd_sample(const GlobalFlags& g, const SampleArgs& a) {
  const Model model = model_from_checkpoint(a.checkpoint, nullptr);
  const std::string prompt_text = a.prompt_hex.empty() ? a.prompt : parse_hex(a.prompt_hex);
  std::vector<TokenId> prompt_ids;
  for (unsigned char c : prompt_text) prompt_ids.push_back(c);
  Rng rng = Rng::derive(g.seed.value_or(0), {0x5a});
  std::vector<TokenId> out;
  if (model.config().causal) {
    out = generate_ar(model, prompt_ids, a.length, rng, a.temperature);
  } else {
    RemaskStrategy strategy{parse_remask_kind(a.strategy), a.block_len};
    if (strategy.kind == RemaskKind::semi_ar && strategy.block_len == 0) strategy.block_len = a.length;
    out = generate_diffusion(model, prompt_ids, a.length, make_schedule(a.steps, parse_schedule_shape(a.schedule)),
                             strategy, rng, a.temperature);
  }
  const auto bytes = detokenize(out);
  const std::string text(bytes.begin(), bytes.end());
  if (!a.output.empty()) {
    write_text(a.output, prompt_text + text);
  } else {
    std::cout << prompt_text << text << "\n";
    if (!g.out_dir.empty()) write_text(std::filesystem::path(g.out_dir) / "sample.txt", prompt_text + text);
  }
  return 0;
}

int cmd_validate(const GlobalFlags& g, const std::string& checkpoint, const std::string& config_path) {
  RunConfig cfg;
  Model model = model_from_checkpoint(checkpoint, &cfg);
  if (!config_path.empty()) cfg = load_run_config(config_path);
  if (g.seed) cfg.run.seed = *g.seed;
  const PackedCorpus corpus = load_corpus(cfg);
  const ValidationResult v = validate(model, cfg.run.objective, corpus, cfg.run.seed, cfg.run.val_batch_size);
  char line[96];
  std::snprintf(line, sizeof line, "val_loss=%.17g val_acc=%.17g\n", v.loss, v.accuracy);
  std::cout << line;
  if (!g.out_dir.empty()) write_text(std::filesystem::path(g.out_dir) / "validation.txt", line);
  return 0;
}

int cmd_selfcheck(const GlobalFlags& g) {
  const std::filesystem::path scratch =
      (g.out_dir.empty() ? std::filesystem::temp_directory_path() / "tdlab-selfcheck" : std::filesystem::path(g.out_dir));
  bool all = true;
  for (const auto& r : checks::selfcheck_suite(scratch)) {
    std::cout << checks::format(r) << std::endl;
    all = all && r.pass;
  }
  std::cout << (all ? "selfcheck: all checks passed" : "selfcheck: FAILED") << std::endl;
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // keep activation buffers on the heap instead of fresh mmaps every step
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"tdlab: token dropout / masked diffusion training lab"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the run seed");
  app.add_option("--out-dir", g.out_dir, "Output directory (overrides TDLAB_OUT and the config)");
  app.add_option("--threads", g.threads, "Threads per run (runs are single-threaded; only 1 is accepted)")
      ->check(CLI::Range(1, 1));
  app.add_option("--jobs", g.jobs, "Concurrent grid cells for ablate")->check(CLI::PositiveNumber);

  std::string config_path, resume, grid, checkpoint;
  auto* train = app.add_subcommand("train", "Train one run from a config file");
  train->add_option("--config", config_path, "Run config (JSON)")->required();
  train->add_option("--resume", resume, "Resume from this checkpoint");

  auto* ablate = app.add_subcommand("ablate", "Run a grid of configs and write summary.tsv");
  ablate->add_option("--grid", grid, "Grid file, or the builtin name ablations")->required();
  ablate->add_option("--config", config_path, "Base config");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "Generate from a checkpoint");
  sample->add_option("--checkpoint", sa.checkpoint)->required();
  auto* p1 = sample->add_option("--prompt", sa.prompt, "Prompt text");
  sample->add_option("--prompt-hex", sa.prompt_hex, "Prompt bytes as hex")->excludes(p1);
  sample->add_option("--length", sa.length, "Tokens to generate")->check(CLI::PositiveNumber);
  sample->add_option("--steps", sa.steps, "Reverse diffusion steps K")->check(CLI::PositiveNumber);
  sample->add_option("--schedule", sa.schedule)->check(CLI::IsMember({"uniform", "cosine"}));
  sample->add_option("--strategy", sa.strategy)->check(CLI::IsMember({"random", "low_confidence", "semi_ar"}));
  sample->add_option("--block-len", sa.block_len, "Block length for semi_ar");
  sample->add_option("--temperature", sa.temperature)->check(CLI::NonNegativeNumber);
  sample->add_option("--output", sa.output, "Write generated text here instead of stdout");

  auto* val = app.add_subcommand("validate", "Validation loss of a checkpoint");
  val->add_option("--checkpoint", checkpoint)->required();
  val->add_option("--config", config_path, "Config naming the corpus (default: the checkpoint's echo)");

  auto* selfcheck = app.add_subcommand("selfcheck", "Gradient, statistics and oracle checks");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;
  try {
    if (*train) return cmd_train(g, config_path, resume);
    if (*ablate) return cmd_ablate(g, grid, config_path);
    if (*sample) return cmd_sample(g, sa);
    if (*val) return cmd_validate(g, checkpoint, config_path);
    if (*selfcheck) return cmd_selfcheck(g);
  } catch (const std::exception& e) {
    std::cerr << "tdlab: error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
