#include "tdlab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tdlab {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw std::invalid_argument(path + ": " + why);
}

/// Reads fields of one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json* find(const std::string& k) {
    seen_.insert(k);
    auto it = j_.find(k);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& k, std::size_t& out) {
    if (const json* v = find(k)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0) fail(key(k), "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& k, double& out) {
    if (const json* v = find(k)) {
      if (!v->is_number()) fail(key(k), "expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& k, bool& out) {
    if (const json* v = find(k)) {
      if (!v->is_boolean()) fail(key(k), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& k, std::string& out) {
    if (const json* v = find(k)) {
      if (!v->is_string()) fail(key(k), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class Enum, class Parse>
  void read_enum(const std::string& k, Enum& out, Parse parse) {
    std::string s;
    if (find(k) == nullptr) return;
    read(k, s);
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      std::string why = e.what();
      if (const auto colon = why.find(": "); colon != std::string::npos) why = why.substr(colon + 2);
      fail(key(k), why);
    }
  }
  Section sub(const std::string& k) {
    static const json empty = json::object();
    const json* v = find(k);
    return Section(v ? *v : empty, key(k));
  }
  /// Rejects keys that were never asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(key(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  TrainRun& r = cfg.run;
  Section top(j, "");
  top.read("name", r.name);
  top.read("seed", r.seed);
  top.read_enum("objective", r.objective, parse_objective_kind);
  std::string out_dir;
  top.read("out_dir", out_dir);
  r.out_dir = out_dir;

  {
    Section c = top.sub("corpus");
    c.read("path", cfg.corpus.path);
    c.read("seed", cfg.corpus.seed);
    c.read("synthetic_bytes", cfg.corpus.synthetic_bytes);
    c.read("split_digest", cfg.corpus.split_digest);
    c.finish();
  }
  {
    Section m = top.sub("model");
    ModelConfig& mc = r.model;
    m.read("n_layers", mc.n_layers);
    m.read("d_model", mc.d_model);
    m.read("n_heads", mc.n_heads);
    m.read("n_kv_groups", mc.n_kv_groups);
    m.read("d_ffn", mc.d_ffn);
    m.read("seq_len", mc.seq_len);
    m.read("vocab_size", mc.vocab_size);
    m.read("attn_dropout", mc.attn_dropout_p);
    m.read("mlp_dropout", mc.mlp_dropout_p);
    m.read("rope_base", mc.rope_base);
    m.read("rmsnorm_eps", mc.rmsnorm_eps);
    m.read("init_std", mc.init_std);
    m.finish();
  }
  {
    Section c = top.sub("corruption");
    c.read_enum("kind", r.corruption.kind, parse_corruption_kind);
    c.read("ratio", r.corruption.ratio);
    c.read_enum("mode", r.corruption.mode, parse_corruption_mode);
    c.read("t_min", r.corruption.t_min);
    c.finish();
  }
  {
    Section o = top.sub("optimizer");
    OptimizerConfig& oc = r.optimizer;
    o.read("lr_peak", oc.lr_peak);
    o.read("warmup_steps", oc.warmup_steps);
    o.read("beta1", oc.beta1);
    o.read("beta2", oc.beta2);
    o.read("eps", oc.eps);
    o.read("weight_decay", oc.weight_decay);
    o.read("clip_norm", oc.clip_norm);
    o.read("exclude_norms_and_embeddings", oc.exclude_norms_and_embeddings);
    o.finish();
  }
  {
    Section t = top.sub("train");
    t.read("epochs", r.epochs);
    t.read("batch_size", r.batch_size);
    t.read("val_batch_size", r.val_batch_size);
    t.read("eval_every", r.eval_every);
    t.read("checkpoint_every", r.checkpoint_every);
    t.read_enum("checkpoint_precision", r.checkpoint_precision, parse_checkpoint_precision);
    t.finish();
  }
  top.finish();

  r.model.causal = objective_is_causal(r.objective);
  if (cfg.corpus.path.empty() && cfg.corpus.synthetic_bytes == 0)
    fail("corpus.path", "required (or set corpus.synthetic_bytes)");
  if (!cfg.corpus.path.empty() && cfg.corpus.synthetic_bytes != 0)
    fail("corpus.synthetic_bytes", "cannot be combined with corpus.path");
  if (r.name.empty()) fail("name", "must not be empty");
  r.validate();
  r.config_echo = config_echo(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& cfg) {
  const TrainRun& r = cfg.run;
  json j;
  j["name"] = r.name;
  j["seed"] = r.seed;
  j["objective"] = to_string(r.objective);
  j["out_dir"] = r.out_dir.string();
  j["corpus"] = {{"path", cfg.corpus.path},
                 {"seed", cfg.corpus.seed},
                 {"synthetic_bytes", cfg.corpus.synthetic_bytes},
                 {"split_digest", cfg.corpus.split_digest}};
  const ModelConfig& m = r.model;
  j["model"] = {{"n_layers", m.n_layers},       {"d_model", m.d_model},
                {"n_heads", m.n_heads},         {"n_kv_groups", m.n_kv_groups},
                {"d_ffn", m.d_ffn},             {"seq_len", m.seq_len},
                {"vocab_size", m.vocab_size},   {"attn_dropout", m.attn_dropout_p},
                {"mlp_dropout", m.mlp_dropout_p}, {"rope_base", m.rope_base},
                {"rmsnorm_eps", m.rmsnorm_eps}, {"init_std", m.init_std}};
  j["corruption"] = {{"kind", to_string(r.corruption.kind)},
                     {"ratio", r.corruption.ratio},
                     {"mode", to_string(r.corruption.mode)},
                     {"t_min", r.corruption.t_min}};
  const OptimizerConfig& o = r.optimizer;
  j["optimizer"] = {{"lr_peak", o.lr_peak},
                    {"warmup_steps", o.warmup_steps},
                    {"beta1", o.beta1},
                    {"beta2", o.beta2},
                    {"eps", o.eps},
                    {"weight_decay", o.weight_decay},
                    {"clip_norm", o.clip_norm},
                    {"exclude_norms_and_embeddings", o.exclude_norms_and_embeddings}};
  j["train"] = {{"epochs", r.epochs},
                {"batch_size", r.batch_size},
                {"val_batch_size", r.val_batch_size},
                {"eval_every", r.eval_every},
                {"checkpoint_every", r.checkpoint_every},
                {"checkpoint_precision", to_string(r.checkpoint_precision)}};
  return j;
}

std::string config_echo(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

PackedCorpus load_corpus(RunConfig& cfg) {
  std::vector<std::uint8_t> bytes;
  if (cfg.corpus.synthetic_bytes > 0) {
    const std::string text = synthetic_corpus(cfg.corpus.synthetic_bytes, cfg.corpus.seed);
    bytes.assign(text.begin(), text.end());
  } else {
    bytes = read_file_bytes(cfg.corpus.path);
  }
  PackedCorpus corpus = ingest(bytes, cfg.run.model.seq_len, cfg.corpus.seed);
  const std::string digest = corpus.split_digest();
  if (!cfg.corpus.split_digest.empty() && cfg.corpus.split_digest != digest)
    fail("corpus.split_digest", "expected " + cfg.corpus.split_digest + ", corpus gives " + digest);
  cfg.corpus.split_digest = digest;
  cfg.run.config_echo = config_echo(cfg);
  return corpus;
}

std::vector<RunConfig> parse_grid(const json& grid) {
  Section top(grid, "");
  const json* base = top.find("base");
  const json* runs = top.find("runs");
  top.finish();
  if (!runs || !runs->is_array()) fail("runs", "expected an array of {name, set}");
  if (runs->empty()) fail("runs", "grid is empty");
  const json base_json = base ? *base : json::object();
  std::vector<RunConfig> out;
  std::set<std::string> names;
  for (std::size_t i = 0; i < runs->size(); ++i) {
    const std::string at = "runs[" + std::to_string(i) + "]";
    Section cell((*runs)[i], at);
    std::string name;
    cell.read("name", name);
    const json* set = cell.find("set");
    cell.finish();
    if (name.empty()) fail(at + ".name", "required");
    if (!names.insert(name).second) fail(at + ".name", "duplicate run name '" + name + "'");
    json merged = base_json;
    if (set) merged.merge_patch(*set);
    merged["name"] = name;
    RunConfig cfg;
    try {
      cfg = parse_run_config(merged);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(at + " (" + name + "): " + e.what());
    }
    if (!cfg.run.out_dir.empty()) cfg.run.out_dir /= name;
    cfg.run.config_echo = config_echo(cfg);
    out.push_back(std::move(cfg));
  }
  return out;
}

bool is_builtin_grid(const std::string& name) { return name == "ablations"; }

std::vector<RunConfig> builtin_grid(const RunConfig& base) {
  std::vector<RunConfig> out;
  for (TrainRun& r : ablation_grid(base.run)) {
    RunConfig cfg{std::move(r), base.corpus};
    cfg.run.config_echo = config_echo(cfg);
    out.push_back(std::move(cfg));
  }
  return out;
}

}  // namespace tdlab
