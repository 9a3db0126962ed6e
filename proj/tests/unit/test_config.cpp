#include <gtest/gtest.h>

#include "tdlab/config.hpp"

using namespace tdlab;
using nlohmann::json;

namespace {

json minimal() { return json{{"corpus", {{"synthetic_bytes", 4096}}}}; }

std::string error_of(const json& j) {
  try {
    parse_run_config(j);
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsFromMinimalConfig) {
  const RunConfig c = parse_run_config(minimal());
  EXPECT_EQ(c.run.name, "run");
  EXPECT_EQ(c.run.objective, ObjectiveKind::ar);
  EXPECT_TRUE(c.run.model.causal);
  EXPECT_EQ(c.run.model.n_layers, 4u);
  EXPECT_EQ(c.run.model.d_model, 128u);
  EXPECT_EQ(c.corpus.synthetic_bytes, 4096u);
  EXPECT_FALSE(c.run.config_echo.empty());
}

TEST(Config, ObjectiveDecidesCausality) {
  json j = minimal();
  j["objective"] = "diffusion";
  j["corruption"] = {{"kind", "per_sample_uniform"}};
  EXPECT_FALSE(parse_run_config(j).run.model.causal);
  j["objective"] = "diffusion_input_ar_loss";
  EXPECT_TRUE(parse_run_config(j).run.model.causal);
}

TEST(Config, UnknownKeysNameTheDottedPath) {
  json j = minimal();
  j["optimizer"] = {{"weight_decy", 0.1}};
  EXPECT_EQ(error_of(j), "optimizer.weight_decy: unknown key");
  j = minimal();
  j["learning_rate"] = 1.0;
  EXPECT_EQ(error_of(j), "learning_rate: unknown key");
}

TEST(Config, TypeAndValueErrors) {
  json j = minimal();
  j["model"] = {{"d_model", "wide"}};
  EXPECT_EQ(error_of(j), "model.d_model: expected a non-negative integer");
  j = minimal();
  j["train"] = {{"epochs", -1}};
  EXPECT_EQ(error_of(j), "train.epochs: expected a non-negative integer");
  j = minimal();
  j["objective"] = "gan";
  EXPECT_NE(error_of(j).find("objective: "), std::string::npos);
  j = minimal();
  j["corruption"] = {{"mode", "sideways"}};
  EXPECT_NE(error_of(j).find("corruption.mode: "), std::string::npos);
  j = minimal();
  j["optimizer"] = {{"exclude_norms_and_embeddings", 1}};
  EXPECT_EQ(error_of(j), "optimizer.exclude_norms_and_embeddings: expected true or false");
  j = minimal();
  j["model"] = json::array();
  EXPECT_EQ(error_of(j), "model: expected an object");
  j = minimal();
  j["optimizer"] = {{"beta2", 1.0}};
  EXPECT_NE(error_of(j).find("beta2"), std::string::npos);
}

TEST(Config, CorpusSourceIsRequiredAndExclusive) {
  EXPECT_EQ(error_of(json::object()), "corpus.path: required (or set corpus.synthetic_bytes)");
  json j = minimal();
  j["corpus"]["path"] = "x.txt";
  EXPECT_NE(error_of(j).find("corpus.synthetic_bytes"), std::string::npos);
}

TEST(Config, EchoRoundTrips) {
  json j = minimal();
  j["name"] = "echo";
  j["seed"] = 12345;
  j["objective"] = "diffusion_input_ar_loss";
  j["corruption"] = {{"kind", "fixed_ratio"}, {"ratio", 0.3}, {"mode", "hidden_zero"}};
  j["model"] = {{"n_layers", 1}, {"d_model", 16}, {"n_heads", 2}, {"n_kv_groups", 1}, {"d_ffn", 24}, {"seq_len", 32},
                {"attn_dropout", 0.1}};
  j["optimizer"] = {{"lr_peak", 0.001}, {"weight_decay", 0.5}};
  j["train"] = {{"epochs", 3}, {"checkpoint_precision", "f32"}};
  const RunConfig a = parse_run_config(j);
  const RunConfig b = parse_run_config(json::parse(a.run.config_echo));
  EXPECT_EQ(a.run.config_echo, b.run.config_echo);
  EXPECT_EQ(b.run.corruption, CorruptionSpec::fixed(0.3, CorruptionMode::hidden_zero));
  EXPECT_EQ(b.run.optimizer, a.run.optimizer);
  EXPECT_EQ(b.run.checkpoint_precision, CheckpointPrecision::f32);
  EXPECT_EQ(b.corpus, a.corpus);
}

TEST(Config, LoadCorpusFillsAndChecksDigest) {
  json j = minimal();
  j["model"] = {{"seq_len", 32}};
  RunConfig c = parse_run_config(j);
  const PackedCorpus corpus = load_corpus(c);
  EXPECT_EQ(corpus.sequences.size(), 4096u / 32);
  EXPECT_EQ(c.corpus.split_digest, corpus.split_digest());
  EXPECT_NE(c.run.config_echo.find(c.corpus.split_digest), std::string::npos);
  c.corpus.split_digest = "0000";
  EXPECT_THROW(load_corpus(c), std::invalid_argument);
}

TEST(Config, MissingFileIsReported) {
  EXPECT_THROW(load_run_config("/nonexistent/tdlab.json"), std::invalid_argument);
}

TEST(Grid, CellsMergeOverBase) {
  const json grid = {{"base", {{"corpus", {{"synthetic_bytes", 4096}}}, {"out_dir", "/tmp/g"}}},
                     {"runs",
                      {{{"name", "a"}, {"set", {{"optimizer", {{"weight_decay", 0.5}}}}}},
                       {{"name", "b"}, {"set", {{"objective", "diffusion"}, {"corruption", {{"kind", "per_sample_uniform"}}}}}}}}};
  const auto cells = parse_grid(grid);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].run.name, "a");
  EXPECT_EQ(cells[0].run.optimizer.weight_decay, 0.5);
  EXPECT_EQ(cells[0].run.out_dir, std::filesystem::path("/tmp/g/a"));
  EXPECT_EQ(cells[1].run.objective, ObjectiveKind::diffusion);
  EXPECT_FALSE(cells[1].run.model.causal);
}

TEST(Grid, Errors) {
  const json base = {{"corpus", {{"synthetic_bytes", 4096}}}};
  EXPECT_THROW(parse_grid(json{{"base", base}, {"runs", json::array()}}), std::invalid_argument);
  EXPECT_THROW(parse_grid(json{{"base", base}}), std::invalid_argument);
  try {
    parse_grid(json{{"base", base}, {"runs", {{{"name", "x"}}, {{"name", "x"}}}}});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate run name 'x'"), std::string::npos);
  }
  try {
    parse_grid(json{{"base", base}, {"runs", {{{"name", "x"}, {"set", {{"train", {{"epoch", 2}}}}}}}}});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("train.epoch: unknown key"), std::string::npos);
  }
}

TEST(Grid, BuiltinAblations) {
  EXPECT_TRUE(is_builtin_grid("ablations"));
  EXPECT_FALSE(is_builtin_grid("everything"));
  json j = minimal();
  j["out_dir"] = "/tmp/abl";
  const auto cells = builtin_grid(parse_run_config(j));
  ASSERT_EQ(cells.size(), 15u);
  for (const auto& c : cells) {
    EXPECT_EQ(c.corpus.synthetic_bytes, 4096u);
    EXPECT_EQ(c.run.out_dir, std::filesystem::path("/tmp/abl") / c.run.name);
    const RunConfig back = parse_run_config(json::parse(c.run.config_echo));
    EXPECT_EQ(back.run.config_echo, c.run.config_echo);
  }
}
