#include <gtest/gtest.h>

#include "tdlab/tensor.hpp"
#include "test_util.hpp"

using namespace tdlab;

TEST(Tensor, ShapeAndZeros) {
  const Tensor t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.numel(), 6u);
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor a({2}, {1.0, 2.0});
  Tensor b = a;
  Tensor c = a.clone();
  b.mutable_data()[0] = 5.0;
  EXPECT_EQ(a.data()[0], 5.0);
  EXPECT_EQ(c.data()[0], 1.0);
  EXPECT_TRUE(a.same_storage(b));
  EXPECT_FALSE(a.same_storage(c));
}

TEST(Autograd, SumGivesOnes) {
  Tensor theta({5}, {0.1, -2.0, 3.0, 4.5, 0.0}, true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(theta));
  for (double g : theta.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autograd, HalfSumSquaresGivesTheta) {
  const auto values = testutil::random_values(7, 1);
  Tensor theta({7}, values, true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(half_sum_squares(theta));
  for (std::size_t i = 0; i < values.size(); ++i) EXPECT_DOUBLE_EQ(theta.grad()[i], values[i]);
}

TEST(Autograd, LeafGradientsAccumulateAcrossBackwardCalls) {
  Tensor theta({3}, {1.0, 2.0, 3.0}, true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = sum(theta);
  tape.backward(loss);
  tape.backward(loss);
  for (double g : theta.grad()) EXPECT_EQ(g, 2.0);
  theta.zero_grad();
  for (double g : theta.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Autograd, SharedInputReceivesBothContributions) {
  Tensor x({2}, {3.0, -1.0}, true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(mul(x, x)));  // d/dx x^2 = 2x
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -2.0);
}

TEST(Autograd, NothingRecordedWithoutTapeOrGradInputs) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor c({2}, {1.0, 2.0}, false);
  Tape tape;
  {
    TapeScope scope(tape);
    (void)sum(c);
    EXPECT_EQ(tape.size(), 0u);
    {
      NoGradScope off;
      (void)sum(x);
      EXPECT_EQ(tape.size(), 0u);
    }
    (void)sum(x);
    EXPECT_EQ(tape.size(), 1u);
  }
  EXPECT_EQ(Tape::active(), nullptr);
}

TEST(Autograd, BackwardNeedsScalarAndActiveTape) {
  Tensor x({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(sum(x)), std::logic_error);
  Tape tape;
  TapeScope scope(tape);
  EXPECT_THROW(tape.backward(scale(x, 2.0)), std::invalid_argument);
}

TEST(Autograd, ChainThroughMatmulAndScale) {
  Tensor a({1, 2}, {1.0, 2.0}, true);
  Tensor b({2, 1}, {3.0, 4.0}, true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = scale(matmul(a, b), 0.5);
  EXPECT_DOUBLE_EQ(y.item(), 5.5);
  tape.backward(sum(y));
  EXPECT_DOUBLE_EQ(a.grad()[0], 1.5);
  EXPECT_DOUBLE_EQ(a.grad()[1], 2.0);
  EXPECT_DOUBLE_EQ(b.grad()[0], 0.5);
  EXPECT_DOUBLE_EQ(b.grad()[1], 1.0);
}
