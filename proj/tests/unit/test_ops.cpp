#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctrl/batch.hpp"
#include "ctrl/error.hpp"
#include "ctrl/grad_check.hpp"
#include "ctrl/gradcheck_suite.hpp"
#include "ctrl/ops.hpp"

namespace ctrl {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

TEST(Tensor, RejectsZeroDimensionsAndCountMismatch) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  Tensor t({2, 3});
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.ensure_grad().size(), 6u);
  EXPECT_THROW(t.reshape({4, 2}), ShapeError);
}

TEST(MatvecBatched, IdentityWeight) {
  const Tensor w({2, 2}, {1, 0, 0, 1});
  const Tensor x({2, 1}, {3, -1});
  const Tensor out = matvec_batched(w, x, Tensor({2}));
  EXPECT_EQ(out, Tensor({2, 1}, {3, -1}));
}

TEST(MatvecBatched, HandComputedAffine) {
  const Tensor out = matvec_batched(Tensor({2, 2}, {1, 2, 0, 1}), Tensor({2, 1}, {1, 1}), Tensor({2}, {1, 1}));
  EXPECT_EQ(out, Tensor({2, 1}, {4, 2}));
}

TEST(MatvecBatched, ShapeErrorNamesBothShapes) {
  try {
    matvec_batched(Tensor({2, 3}), Tensor({2, 1}), Tensor({2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2 x 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2 x 1]"), std::string::npos) << msg;
  }
}

TEST(Conv1dSame, HandComputedSumKernel) {
  const Tensor out = conv1d_same(Tensor({1, 3}, {1, 2, 3}), Tensor({1, 1, 3}, {1, 1, 1}), Tensor({1}));
  EXPECT_EQ(out, Tensor({1, 3}, {3, 6, 5}));
}

TEST(Conv1dSame, ZeroWeightGivesBias) {
  const Tensor out = conv1d_same(Tensor({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}), Tensor({3, 2, 3}), Tensor({3}, {7, 7, 7}));
  for (double v : out.data()) EXPECT_EQ(v, 7.0);
}

TEST(Conv1dSame, LengthOneWithWideKernel) {
  const Tensor out = conv1d_same(Tensor({1, 1}, {2}), Tensor({1, 1, 5}, {1, 2, 3, 4, 5}), Tensor({1}));
  ASSERT_EQ(out.shape(), (Shape{1, 1}));
  EXPECT_EQ(out[0], 6.0);  // only the centre tap overlaps the input
}

TEST(Conv1dSame, ErrorsOnEvenKernelAndChannelMismatch) {
  EXPECT_THROW(conv1d_same(Tensor({1, 3}), Tensor({1, 1, 4}), Tensor({1})), ConfigError);
  EXPECT_THROW(conv1d_same(Tensor({2, 3}), Tensor({1, 1, 3}), Tensor({1})), ShapeError);
}

TEST(Conv1dSame, OutputLengthAlwaysEqualsInputLength) {
  std::mt19937_64 rng(3);
  for (std::size_t len : {1u, 2u, 3u, 7u, 20u}) {
    for (std::size_t k : {1u, 3u, 5u, 7u}) {
      const Tensor out = conv1d_same(random_tensor({3, len}, rng), random_tensor({4, 3, k}, rng), random_tensor({4}, rng));
      EXPECT_EQ(out.shape(), (Shape{4, len}));
    }
  }
}

TEST(Activation, ReluAndTanhValues) {
  EXPECT_EQ(activation(Activation::kRelu, Tensor({3}, {-1, 0, 2})), Tensor({3}, {0, 0, 2}));
  EXPECT_EQ(activation(Activation::kTanh, Tensor({1}, {0}))[0], 0.0);
  EXPECT_NEAR(activation(Activation::kTanh, Tensor({1}, {1}))[0], std::tanh(1.0), 1e-15);
  EXPECT_NEAR(std::tanh(1.0), 0.761594, 1e-6);
}

TEST(Activation, ReluGradientAtZeroIsZero) {
  const Tensor x({3}, {-1, 0, 2});
  const Tensor dx = activation_backward(Activation::kRelu, x, activation(Activation::kRelu, x), Tensor({3}, {1, 1, 1}));
  EXPECT_EQ(dx, Tensor({3}, {0, 0, 1}));
}

TEST(Dropout, EvalModeAndZeroRateAreIdentity) {
  Rng rng(1);
  const Tensor x({4}, {1, -2, 3, 4});
  EXPECT_EQ(dropout(x, 0.55, Mode::kEval, rng), x);
  EXPECT_EQ(dropout(x, 0.0, Mode::kTrain, rng), x);
}

TEST(Dropout, FixedMaskInvertedScaling) {
  const DropoutMask mask = make_dropout_mask({1, 0, 1, 0}, 0.5);
  EXPECT_EQ(apply_dropout_mask(Tensor({4}, {2, 2, 2, 2}), mask), Tensor({4}, {4, 0, 4, 0}));
}

TEST(Dropout, RateOfOneIsRejected) {
  Rng rng(1);
  EXPECT_THROW(dropout(Tensor({2}), 1.0, Mode::kTrain, rng), ConfigError);
  EXPECT_THROW(dropout(Tensor({2}), -0.1, Mode::kTrain, rng), ConfigError);
}

TEST(Dropout, TrainModePreservesExpectation) {
  const Tensor x({4}, {1.0, -2.0, 0.5, 3.0});
  Rng rng(2024);
  std::vector<double> sum(x.size(), 0.0);
  constexpr int kTrials = 10000;
  for (int i = 0; i < kTrials; ++i) {
    const Tensor y = dropout(x, 0.55, Mode::kTrain, rng);
    for (std::size_t j = 0; j < y.size(); ++j) sum[j] += y[j];
  }
  for (std::size_t j = 0; j < x.size(); ++j) EXPECT_NEAR(sum[j] / kTrials, x[j], 0.02 * std::abs(x[j]));
}

TEST(Dropout, SameSeedSameMask) {
  Rng a(9), b(9);
  const Tensor x({16}, 1.0);
  EXPECT_EQ(dropout(x, 0.55, Mode::kTrain, a), dropout(x, 0.55, Mode::kTrain, b));
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLog3) {
  const std::vector<std::int32_t> labels{0, 1, 2};
  const std::vector<std::uint8_t> mask{1, 1, 1};
  EXPECT_NEAR(softmax_cross_entropy(Tensor({3, 3}), labels, mask).loss, std::log(3.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectLogit) {
  const std::vector<std::int32_t> labels{0};
  const std::vector<std::uint8_t> mask{1};
  const double oracle = std::log1p(2.0 * std::exp(-10.0));  // -log(e^10 / (e^10 + 2))
  const double loss = softmax_cross_entropy(Tensor({1, 3}, {10, 0, 0}), labels, mask).loss;
  EXPECT_NEAR(loss, oracle, 1e-15);
  EXPECT_NEAR(loss, 0.0000908, 5e-7);
}

TEST(SoftmaxCrossEntropy, MaskedPositionContributesNothing) {
  const Tensor logits({2, 3}, {1, 2, 3, 5, -1, 0});
  const std::vector<std::int32_t> labels{2, kIgnoreLabel};
  const std::vector<std::uint8_t> mask{1, 0};
  const CrossEntropy both = softmax_cross_entropy(logits, labels, mask);
  const CrossEntropy first = softmax_cross_entropy(slice_rows(logits, 0, 1), std::vector<std::int32_t>{2},
                                                   std::vector<std::uint8_t>{1});
  EXPECT_DOUBLE_EQ(both.loss, first.loss);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(both.grad_logits.at(1, c), 0.0);
}

TEST(SoftmaxCrossEntropy, AllZeroMaskIsDegenerate) {
  EXPECT_THROW(softmax_cross_entropy(Tensor({2, 3}), std::vector<std::int32_t>{0, 0}, std::vector<std::uint8_t>{0, 0}),
               DegenerateInputError);
}

TEST(SoftmaxCrossEntropy, RowsSumToOneAndLossNonNegative) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = random_tensor({6, 3}, rng);
    for (double& v : logits.data()) v *= 20.0;
    const Tensor p = softmax_rows(logits);
    for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(p.at(r, 0) + p.at(r, 1) + p.at(r, 2), 1.0, 1e-9);
    std::vector<std::int32_t> labels(6);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng() % 3);
    EXPECT_GE(softmax_cross_entropy(logits, labels, std::vector<std::uint8_t>(6, 1)).loss, 0.0);
  }
}

TEST(GradCheck, LinearMapIsExactUpToRounding) {
  const DifferentiableOp scale{"scale",
                               [](std::span<const Tensor> in) {
                                 Tensor out = in[0];
                                 for (double& v : out.data()) v *= 3.0;
                                 return out;
                               },
                               [](std::span<const Tensor>, const Tensor& dout) {
                                 Tensor g = dout;
                                 for (double& v : g.data()) v *= 3.0;
                                 return std::vector<Tensor>{g};
                               }};
  std::mt19937_64 rng(1);
  EXPECT_LT(grad_check(scale, {random_tensor({4, 5}, rng)}).max_rel_error, 1e-7);
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(relative_error(1.0, 0.5), 0.5 / 1.5, 1e-15);
}

// Every case of the standard suite, on several random draws.
TEST(GradCheck, StandardSuiteBelowTolerance) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    for (const auto& c : standard_grad_checks(seed)) {
      const GradCheckResult r = grad_check(c.op, c.inputs, c.options);
      EXPECT_LT(r.max_rel_error, 1e-4) << c.op.name << " seed " << seed;
      EXPECT_GT(r.probed, 0u) << c.op.name;
    }
  }
}

TEST(GradCheck, ReluProbedAwayFromZero) {
  for (const auto& c : standard_grad_checks(11)) {
    if (c.op.name != "relu") continue;
    EXPECT_LT(grad_check(c.op, c.inputs, c.options).max_rel_error, 1e-6);
  }
}

TEST(GradCheck, DetectsBrokenBackward) {
  for (const auto& c : standard_grad_checks(1, "conv1d")) {
    if (c.op.name == "conv1d") EXPECT_GT(grad_check(c.op, c.inputs, c.options).max_rel_error, 1e-4);
  }
}

TEST(Ops, OutputsFiniteAndBitReproducible) {
  std::mt19937_64 rng_a(77), rng_b(77);
  const Tensor xa = random_tensor({3, 9}, rng_a), wa = random_tensor({5, 3, 3}, rng_a), ba = random_tensor({5}, rng_a);
  const Tensor xb = random_tensor({3, 9}, rng_b), wb = random_tensor({5, 3, 3}, rng_b), bb = random_tensor({5}, rng_b);
  const Tensor a = conv1d_same(xa, wa, ba);
  EXPECT_EQ(a, conv1d_same(xb, wb, bb));
  EXPECT_TRUE(a.all_finite());
  std::vector<double> dw(wa.size()), db(5);
  EXPECT_TRUE(conv1d_same_backward(xa, wa, a, dw, db).all_finite());
}

}  // namespace
}  // namespace ctrl
