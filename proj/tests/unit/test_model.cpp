#include <gtest/gtest.h>

#include "tdlab/model.hpp"
#include "test_util.hpp"

using namespace tdlab;
using testutil::small_config;

TEST(ModelConfig, DeskDefaults) {
  const ModelConfig c;
  EXPECT_EQ(c.n_layers, 4u);
  EXPECT_EQ(c.d_model, 128u);
  EXPECT_EQ(c.n_heads, 4u);
  EXPECT_EQ(c.n_kv_groups, 2u);
  EXPECT_EQ(c.d_ffn, 384u);
  EXPECT_EQ(c.seq_len, 256u);
  EXPECT_EQ(c.rope_base, 1e6);
  EXPECT_EQ(c.rmsnorm_eps, 1e-6);
  EXPECT_EQ(c.init_std, 0.02);
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, ValidationNamesTheField) {
  auto expect_field = [](ModelConfig c, const std::string& field) {
    try {
      c.validate();
      FAIL() << "expected failure for " << field;
    } catch (const std::invalid_argument& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  ModelConfig c;
  c.n_kv_groups = 3;
  expect_field(c, "model.n_kv_groups");
  c = {};
  c.d_model = 100;
  c.n_heads = 4;  // head_dim 25 is odd
  expect_field(c, "model.n_heads");
  c = {};
  c.attn_dropout_p = 1.0;
  expect_field(c, "model.attn_dropout");
  c = {};
  c.vocab_size = 2;
  expect_field(c, "model.vocab_size");
}

TEST(Model, ParameterCountIsPureFunctionOfConfig) {
  for (const ModelConfig& c : {small_config(), ModelConfig{}}) {
    const Model m(c, 1);
    std::size_t total = 0;
    for (const auto& p : m.parameters()) total += p.tensor.numel();
    EXPECT_EQ(total, parameter_count(c));
    EXPECT_EQ(m.parameter_count(), parameter_count(c));
  }
  const ModelConfig d;
  const std::size_t hd = d.head_dim(), kv = d.n_kv_groups * hd;
  const std::size_t per_layer = 2 * d.d_model + 2 * hd + d.d_model * d.d_model * 2 + 2 * d.d_model * kv +
                                3 * d.d_model * d.d_ffn;
  EXPECT_EQ(parameter_count(d), 2 * d.vocab_size * d.d_model + d.d_model + d.n_layers * per_layer);
}

TEST(Model, ParameterNamesAndOrder) {
  const Model m(small_config(), 1);
  const auto& ps = m.parameters();
  ASSERT_EQ(ps.size(), 3u + 11u * 2u);
  EXPECT_EQ(ps.front().name, "tok_embed");
  EXPECT_EQ(ps[1].name, "layers.0.attn_norm");
  EXPECT_EQ(ps.back().name, "lm_head");
  EXPECT_EQ(m.parameter("layers.1.q_norm").shape(), (Shape{8}));
  EXPECT_THROW((void)m.parameter("nope"), std::out_of_range);
}

TEST(Model, InitIsSeededAndNormsStartAtOne) {
  const Model a(small_config(), 5), b(small_config(), 5), c(small_config(), 6);
  EXPECT_TRUE(testutil::bit_equal(a.parameter("tok_embed").data(), b.parameter("tok_embed").data()));
  EXPECT_FALSE(testutil::bit_equal(a.parameter("tok_embed").data(), c.parameter("tok_embed").data()));
  for (double g : a.parameter("final_norm").data()) EXPECT_EQ(g, 1.0);
}

TEST(Model, ForwardShapeAndErrors) {
  Model m(small_config(258, 8), 1);
  m.set_training(false);
  const Tensor y = m.forward(testutil::random_tokens(2, 8, 256, 1));
  EXPECT_EQ(y.shape(), (Shape{2, 8, 258}));
  EXPECT_THROW(m.forward(testutil::random_tokens(1, 9, 256, 1)), std::invalid_argument);
  ModelConfig c = small_config(258, 8);
  c.mlp_dropout_p = 0.1;
  Model d(c, 1);
  d.set_training(true);
  EXPECT_THROW(d.forward(testutil::random_tokens(1, 4, 256, 1)), std::invalid_argument);
}

TEST(Model, CausalPrefixLogitsIgnoreLaterTokens) {
  Model m(small_config(258, 10), 2);
  m.set_training(false);
  const TokenMatrix x = testutil::random_tokens(1, 10, 256, 3);
  const Tensor base = m.forward(x);
  for (std::size_t s = 1; s < 10; ++s) {
    TokenMatrix y = x;
    y.at(0, s) = static_cast<TokenId>((y.at(0, s) + 17) % 256);
    const Tensor out = m.forward(y);
    EXPECT_TRUE(testutil::bit_equal(base.data().subspan(0, s * 258), out.data().subspan(0, s * 258))) << s;
  }
}

TEST(Model, NonCausalFirstPositionSeesLastToken) {
  Model m(small_config(258, 10, false), 2);
  m.set_training(false);
  TokenMatrix x = testutil::random_tokens(1, 10, 256, 3);
  const Tensor a = m.forward(x);
  x.at(0, 9) = static_cast<TokenId>((x.at(0, 9) + 1) % 256);
  const Tensor b = m.forward(x);
  bool changed = false;
  for (std::size_t v = 0; v < 258; ++v) changed = changed || a.data()[v] != b.data()[v];
  EXPECT_TRUE(changed);
}

TEST(Model, InferenceIgnoresDropoutAndIsDeterministic) {
  ModelConfig c = small_config(258, 8);
  c.attn_dropout_p = 0.5;
  c.mlp_dropout_p = 0.5;
  Model m(c, 3);
  m.set_training(false);
  const TokenMatrix x = testutil::random_tokens(2, 8, 256, 4);
  Rng r1(1), r2(2);
  EXPECT_TRUE(testutil::bit_equal(m.forward(x, &r1).data(), m.forward(x, &r2).data()));
  EXPECT_TRUE(testutil::bit_equal(m.forward(x).data(), m.forward(x, &r1).data()));
  m.set_training(true);
  Rng r3(1), r4(2);
  EXPECT_FALSE(testutil::bit_equal(m.forward(x, &r3).data(), m.forward(x, &r4).data()));
}

TEST(Model, KeepRowsZeroesInputEmbedding) {
  Model m(small_config(258, 6), 3);
  m.set_training(false);
  const TokenMatrix x = testutil::random_tokens(1, 6, 256, 5);
  TokenMatrix y = x;
  y.at(0, 2) = 7;
  std::vector<std::uint8_t> keep{1, 1, 0, 1, 1, 1};
  // with row 2 dropped, its token id no longer matters
  EXPECT_TRUE(testutil::bit_equal(m.forward(x, nullptr, keep).data(), m.forward(y, nullptr, keep).data()));
}

TEST(Model, CloneIsIndependent) {
  Model a(small_config(), 1);
  Model b = a.clone();
  b.parameter("lm_head").mutable_data()[0] += 1.0;
  EXPECT_NE(a.parameter("lm_head").data()[0], b.parameter("lm_head").data()[0]);
}
