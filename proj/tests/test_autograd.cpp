#include <gtest/gtest.h>

#include "metalens/errors.hpp"
#include "metalens/numerics/autograd.hpp"
#include "metalens/numerics/ops.hpp"
#include "test_support.hpp"

using namespace metalens;
using namespace metalens::numerics;

TEST(GradTape, ProductRuleOnScalars) {
  Tensor x = Tensor::scalar(3).set_requires_grad(true);
  Tensor y = Tensor::scalar(-2).set_requires_grad(true);
  GradTape tape;
  GradTape::Scope scope(tape);
  Tensor f = add(mul(x, y), mul(x, x));  // xy + x^2
  tape.backward(f);
  EXPECT_DOUBLE_EQ(x.grad()[0], -2 + 6);
  EXPECT_DOUBLE_EQ(y.grad()[0], 3);
}

TEST(GradTape, SharedSubexpressionAccumulates) {
  Tensor x = Tensor::scalar(1.5).set_requires_grad(true);
  GradTape tape;
  GradTape::Scope scope(tape);
  Tensor s = sigmoid(x);
  Tensor f = add(s, s);
  tape.backward(f);
  const double sv = 1 / (1 + std::exp(-1.5));
  EXPECT_NEAR(x.grad()[0], 2 * sv * (1 - sv), 1e-15);
}

TEST(GradTape, SecondBackwardWithoutResetIsRejected) {
  Tensor x = Tensor::scalar(2).set_requires_grad(true);
  GradTape tape;
  GradTape::Scope scope(tape);
  Tensor f = mul(x, x);
  tape.backward(f);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(f), ContractError);
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
}

TEST(GradTape, NonScalarLossIsRejected) {
  Tensor x = mltest::random_tensor({3}, 1, -1, 1, true);
  GradTape tape;
  GradTape::Scope scope(tape);
  EXPECT_THROW(tape.backward(mul(x, x)), ContractError);
}

TEST(GradTape, NothingRecordedWithoutActiveTapeOrGradInputs) {
  Tensor x = Tensor::scalar(2);
  GradTape tape;
  {
    GradTape::Scope scope(tape);
    (void)mul(x, x);  // no input requires grad
  }
  EXPECT_EQ(tape.size(), 0u);
  Tensor y = Tensor::scalar(2).set_requires_grad(true);
  (void)mul(y, y);  // no active tape
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_EQ(GradTape::active(), nullptr);
}

TEST(GradTape, UntouchedEntriesGetZeroGradient) {
  Tensor v = Tensor({3}, {1, 2, 3}).set_requires_grad(true);
  GradTape tape;
  GradTape::Scope scope(tape);
  tape.backward(sum(slice(v, 0, 1, 1)));
  ASSERT_EQ(v.grad().size(), 3u);
  EXPECT_EQ(v.grad()[0], 0.0);
  EXPECT_EQ(v.grad()[1], 1.0);
  EXPECT_EQ(v.grad()[2], 0.0);
}

TEST(GradTape, VisitsEntriesInReverseExecutionOrder) {
  Tensor x = Tensor::scalar(0.3).set_requires_grad(true);
  GradTape tape;
  GradTape::Scope scope(tape);
  Tensor a = sigmoid(x);
  Tensor b = gelu(a);
  Tensor c = mul(b, b);
  tape.backward(c);
  const auto& order = tape.visit_order();
  ASSERT_EQ(order.size(), 3u);
  EXPECT_EQ(order[0], 2u);
  EXPECT_EQ(order[2], 0u);
}
