#include <gtest/gtest.h>

#include "tdlab/checks.hpp"
#include "tdlab/corruption.hpp"
#include "test_util.hpp"

using namespace tdlab;

namespace {
const TokenId kMask = Vocab::bytes().mask_id();
}

TEST(ForwardMask, KindNoneIsIdentityAndConsumesNoRandomness) {
  const TokenMatrix x = testutil::random_tokens(3, 7, 256, 1);
  Rng rng(5), untouched(5);
  const auto out = forward_mask(x, CorruptionSpec::none(), kMask, rng);
  EXPECT_EQ(out.tokens, x);
  EXPECT_EQ(out.masked_count(), 0u);
  EXPECT_EQ(rng.next(), untouched.next());
}

TEST(ForwardMask, RatioOneMasksEverything) {
  const TokenMatrix x = testutil::random_tokens(3, 7, 256, 1);
  Rng rng(5);
  const auto out = forward_mask(x, CorruptionSpec::fixed(1.0), kMask, rng);
  EXPECT_EQ(out.masked_count(), x.size());
  for (TokenId id : out.tokens.ids) EXPECT_EQ(id, kMask);
}

TEST(ForwardMask, RatioZeroMasksNothing) {
  const TokenMatrix x = testutil::random_tokens(3, 7, 256, 1);
  Rng rng(5);
  EXPECT_EQ(forward_mask(x, CorruptionSpec::fixed(0.0), kMask, rng).tokens, x);
}

TEST(ForwardMask, MaskedPositionsCarryMaskIdOthersUnchanged) {
  const TokenMatrix x = testutil::random_tokens(4, 50, 256, 2);
  Rng rng(6);
  const auto out = forward_mask(x, CorruptionSpec::fixed(0.4), kMask, rng);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out.tokens.ids[i], out.mask[i] ? kMask : x.ids[i]);
  const auto keep = out.keep_rows();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(keep[i], out.mask[i] ? 0 : 1);
}

TEST(ForwardMask, HiddenZeroModeLeavesIdsUntouched) {
  const TokenMatrix x = testutil::random_tokens(4, 50, 256, 2);
  Rng rng(6);
  const auto out = forward_mask(x, CorruptionSpec::fixed(0.4, CorruptionMode::hidden_zero), kMask, rng);
  EXPECT_EQ(out.tokens, x);
  EXPECT_GT(out.masked_count(), 0u);
}

TEST(ForwardMask, FixedRatioFrequencyWithinBinomialBound) {
  const TokenMatrix x(100, 1000, TokenId{1});
  Rng rng(7);
  const double frac = static_cast<double>(forward_mask(x, CorruptionSpec::fixed(0.3), kMask, rng).masked_count()) / 1e5;
  EXPECT_LE(std::abs(frac - 0.3), 3.0 * std::sqrt(0.3 * 0.7 / 1e5));
}

TEST(ForwardMask, PerSampleLevelsAreUniformAboveTMin) {
  const TokenMatrix x(10000, 1, TokenId{1});
  Rng rng(8);
  const auto out = forward_mask(x, CorruptionSpec::per_sample(CorruptionMode::input_mask_token, 0.05), kMask, rng);
  for (double t : out.t) {
    ASSERT_GE(t, 0.05);
    ASSERT_LT(t, 1.0);
  }
  EXPECT_GT(checks::ks_p_value(checks::ks_uniform_statistic(out.t, 0.05, 1.0), out.t.size()), 0.01);
  // the same levels against a wrong law are rejected
  EXPECT_LT(checks::ks_p_value(checks::ks_uniform_statistic(out.t, 0.0, 0.8), out.t.size()), 0.01);
}

TEST(ForwardMask, RejectsInputAlreadyMasked) {
  TokenMatrix x(1, 3, TokenId{1});
  x.at(0, 1) = kMask;
  Rng rng(1);
  EXPECT_THROW(forward_mask(x, CorruptionSpec::fixed(0.5), kMask, rng), std::invalid_argument);
}

TEST(CorruptionSpec, ValidationNamesFields) {
  EXPECT_THROW(CorruptionSpec::fixed(1.5).validate(), std::invalid_argument);
  EXPECT_THROW(CorruptionSpec::fixed(-0.1).validate(), std::invalid_argument);
  EXPECT_THROW(CorruptionSpec::per_sample(CorruptionMode::input_mask_token, 0.0).validate(), std::invalid_argument);
  EXPECT_THROW(CorruptionSpec::per_sample(CorruptionMode::input_mask_token, 0.2).validate(), std::invalid_argument);
  EXPECT_NO_THROW(CorruptionSpec::fixed(1.0).validate());
  try {
    CorruptionSpec::fixed(2.0).validate();
  } catch (const std::invalid_argument& e) {
    EXPECT_EQ(std::string(e.what()).rfind("corruption.ratio", 0), 0u);
  }
}

TEST(CorruptionSpec, NamesRoundTrip) {
  for (auto k : {CorruptionKind::none, CorruptionKind::fixed_ratio, CorruptionKind::per_sample_uniform})
    EXPECT_EQ(parse_corruption_kind(to_string(k)), k);
  for (auto m : {CorruptionMode::input_mask_token, CorruptionMode::hidden_zero})
    EXPECT_EQ(parse_corruption_mode(to_string(m)), m);
  EXPECT_THROW(parse_corruption_kind("sometimes"), std::invalid_argument);
}

TEST(TokenDropoutHidden, KeepAllIsIdentity) {
  const Tensor h({4, 2, 3}, testutil::random_values(24, 1));
  Rng rng(1);
  const auto [out, dropped] = token_dropout_hidden(h, CorruptionSpec::fixed(0.0, CorruptionMode::hidden_zero), rng, true);
  EXPECT_TRUE(testutil::bit_equal(out.data(), h.data()));
  for (auto d : dropped) EXPECT_EQ(d, 0);
}

TEST(TokenDropoutHidden, DropAllGivesZeros) {
  const Tensor h({4, 1, 3}, testutil::random_values(12, 2));
  Rng rng(1);
  const auto [out, dropped] = token_dropout_hidden(h, CorruptionSpec::fixed(1.0, CorruptionMode::hidden_zero), rng, true);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
  for (auto d : dropped) EXPECT_EQ(d, 1);
}

TEST(TokenDropoutHidden, SurvivorsAreBitUnscaled) {
  const std::size_t S = 8, B = 3, d = 5;
  const auto hv = testutil::random_values(S * B * d, 3);
  const Tensor h({S, B, d}, hv);
  Rng rng(4);
  const auto [out, dropped] = token_dropout_hidden(h, CorruptionSpec::fixed(0.5, CorruptionMode::hidden_zero), rng, true);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t b = 0; b < B; ++b) {
      const auto row = out.data().subspan((s * B + b) * d, d);
      if (dropped[b * S + s]) {
        for (double v : row) EXPECT_EQ(v, 0.0);
      } else {
        EXPECT_TRUE(testutil::bit_equal(row, std::span<const double>(hv).subspan((s * B + b) * d, d)));
      }
    }
}

TEST(TokenDropoutHidden, TrainOnlyAndHiddenModeOnly) {
  const Tensor h({2, 1, 3}, testutil::random_values(6, 2));
  Rng rng(1);
  EXPECT_THROW(token_dropout_hidden(h, CorruptionSpec::fixed(0.5, CorruptionMode::hidden_zero), rng, false),
               std::logic_error);
  EXPECT_THROW(token_dropout_hidden(h, CorruptionSpec::fixed(0.5), rng, true), std::invalid_argument);
}
