#include <gtest/gtest.h>

#include <cmath>

#include "tdlab/checks.hpp"
#include "tdlab/oracles.hpp"
#include "test_util.hpp"

using namespace tdlab;
using namespace tdlab::oracle;

namespace {

Model inference_model(bool causal, std::size_t vocab = 7, std::size_t seq_len = 8) {
  ModelConfig c = testutil::small_config(vocab, seq_len, causal);
  c.init_std = 0.5;
  Model m(c, 21);
  m.set_training(false);
  return m;
}

double row_ce(const Tensor& logits, std::size_t row, std::size_t V, TokenId target) {
  return naive_cross_entropy(logits.data().subspan(row * V, V), target);
}

}  // namespace

TEST(NaiveMatmul, SmallExample) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{7, 8, 9, 10, 11, 12};
  EXPECT_EQ(naive_matmul(a, b, 2, 3, 2), (std::vector<double>{58, 64, 139, 154}));
}

TEST(NaiveMatmul, AgreesWithTensorMatmul) {
  const auto a = testutil::random_values(7 * 5, 1), b = testutil::random_values(5 * 3, 2);
  const Tensor c = matmul(Tensor({7, 5}, a), Tensor({5, 3}, b));
  const auto ref = naive_matmul(a, b, 7, 5, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c.data()[i], ref[i], 1e-12);
}

TEST(NaiveCrossEntropy, KnownValues) {
  EXPECT_NEAR(naive_cross_entropy(std::vector<double>(258, 0.0), 3), std::log(258.0), 1e-14);
  EXPECT_NEAR(naive_cross_entropy(std::vector<double>{0.0, std::log(3.0)}, 1), -std::log(0.75), 1e-15);
  EXPECT_NEAR(naive_cross_entropy(std::vector<double>{1000.0, 0.0}, 0), 0.0, 1e-15);
}

TEST(ChainRule, TwoTokensIsOneCrossEntropy) {
  const Model m = inference_model(true);
  const std::vector<TokenId> seq{3, 1};
  const Tensor logits = m.forward(TokenMatrix(1, 1, std::vector<TokenId>{3}));
  EXPECT_NEAR(chain_rule_nll(m, seq), row_ce(logits, 0, 7, 1), 1e-14);
}

TEST(ChainRule, PrefixTermsIgnoreTheFuture) {
  const Model m = inference_model(true);
  const std::vector<TokenId> a{0, 1, 2, 3, 4, 0}, b{0, 1, 2, 4, 0, 3};
  const std::span<const TokenId> pa(a), pb(b);
  EXPECT_EQ(chain_rule_nll(m, pa.first(3)), chain_rule_nll(m, pb.first(3)));
  EXPECT_NE(chain_rule_nll(m, pa), chain_rule_nll(m, pb));
}

TEST(Enumeration, TwoTokensByHand) {
  const Model m = inference_model(false);
  const TokenId M = m.config().vocab().mask_id();
  const std::vector<TokenId> x{2, 4};
  const double t = 0.5;
  auto masked_nll = [&](std::vector<TokenId> in, std::vector<int> where) {
    const Tensor logits = m.forward(TokenMatrix(1, 2, in));
    double s = 0.0;
    for (int i : where) s += row_ce(logits, i, 7, x[i]);
    return s;
  };
  // patterns {0}, {1}, {0,1} each have weight 1/4; the empty pattern contributes 0
  const double expected =
      0.25 * (masked_nll({M, 4}, {0}) + masked_nll({2, M}, {1}) + masked_nll({M, M}, {0, 1})) / (t * 2.0);
  EXPECT_NEAR(enumerate_diffusion_expectation(m, x, t), expected, 1e-14);
}

TEST(Enumeration, FullLevelIsFullyMaskedLoss) {
  const Model m = inference_model(false);
  const TokenId M = m.config().vocab().mask_id();
  const std::vector<TokenId> x{0, 1, 2, 3, 4};
  const Tensor logits = m.forward(TokenMatrix(1, 5, std::vector<TokenId>(5, M)));
  double s = 0.0;
  for (std::size_t i = 0; i < 5; ++i) s += row_ce(logits, i, 7, x[i]);
  EXPECT_NEAR(enumerate_diffusion_expectation(m, x, 1.0), s / 5.0, 1e-14);
}

TEST(Enumeration, Limits) {
  const Model m = inference_model(false, 7, 16);
  EXPECT_THROW(enumerate_diffusion_expectation(m, std::vector<TokenId>(9, 1), 0.5), std::invalid_argument);
  EXPECT_THROW(enumerate_diffusion_expectation(m, std::vector<TokenId>(4, 1), 0.0), std::invalid_argument);
  EXPECT_THROW(enumerate_diffusion_expectation(m, std::vector<TokenId>(4, 1), 1.5), std::invalid_argument);
}

TEST(AdamReference, FirstStepMovesByLearningRate) {
  AdamReference adam(3, 0.1, 0.9, 0.999, 1e-12);
  std::vector<double> theta{1.0, 1.0, 1.0};
  adam.step(theta, std::vector<double>{2.0, -0.5, 1e-3});
  EXPECT_NEAR(theta[0], 0.9, 1e-9);
  EXPECT_NEAR(theta[1], 1.1, 1e-9);
  EXPECT_NEAR(theta[2], 0.9, 1e-8);
}

TEST(Gradcheck, AcceptsCorrectAndRejectsBrokenGradients) {
  ParameterSet ps;
  ps.push_back({"w", Tensor({2, 3}, testutil::random_values(6, 4), true)});
  const auto x = testutil::random_values(3 * 2, 5);
  const OracleReport ok = gradcheck("quad", ps, [&] {
    return half_sum_squares(matmul(ps[0].tensor, Tensor({3, 2}, x)));
  });
  EXPECT_TRUE(ok.pass) << ok.max_rel_err;
  EXPECT_EQ(ok.samples, 6u);
  EXPECT_LT(ok.max_rel_err, 1e-7);
  EXPECT_TRUE(checks::gradient_negative_control().pass);
}

TEST(Ks, StatisticAndPValue) {
  EXPECT_NEAR(checks::ks_uniform_statistic({0.5}, 0.0, 1.0), 0.5, 1e-15);
  std::vector<double> grid;
  for (int i = 0; i < 1000; ++i) grid.push_back((i + 0.5) / 1000.0);
  EXPECT_NEAR(checks::ks_uniform_statistic(grid, 0.0, 1.0), 0.0005, 1e-12);
  EXPECT_GT(checks::ks_p_value(0.0005, 1000), 0.999);
  EXPECT_LT(checks::ks_p_value(0.1, 1000), 1e-6);
  // 95% critical value of the Kolmogorov law is about 1.358 / sqrt(n)
  EXPECT_NEAR(checks::ks_p_value(1.358 / (std::sqrt(1000.0) + 0.12 + 0.11 / std::sqrt(1000.0)), 1000), 0.05, 1e-3);
}
