#include <gtest/gtest.h>

#include <cmath>

#include "support/testing.hpp"

using namespace hts;
using namespace hts::testing;

namespace {

void expect_grad_ok(const GradCheckResult& r) {
  EXPECT_GT(r.checked, 0u);
  EXPECT_EQ(r.failures, 0u) << "worst: " << r.worst << " rel " << r.max_rel_error;
}

}  // namespace

TEST(Tensor, ConstantRejectsWrongValueCount) {
  EXPECT_THROW(Tensor::constant({2, 3}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, BackwardNeedsScalar) {
  Rng rng(1);
  Tensor x = random_parameter({2, 2}, rng);
  EXPECT_THROW(ops::scale(x, 2.0).backward(), ShapeError);
}

TEST(Tensor, GradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  ops::sum(ops::square(x)).backward();
  ops::sum(ops::square(x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
  EXPECT_TRUE(x.reached());
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
  EXPECT_FALSE(x.reached());
}

TEST(Tensor, BackwardScaleMultipliesGradient) {
  Tensor x = Tensor::parameter({1}, {3.0});
  ops::sum(ops::square(x)).backward(0.25);
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.5);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = ops::sum(ops::square(x));
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  y.backward();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, SharedSubexpressionGetsBothContributions) {
  Tensor x = Tensor::parameter({1}, {2.0});
  Tensor y = ops::mul(x, x);               // x^2
  ops::sum(ops::add(y, ops::mul(y, x))).backward();  // x^2 + x^3
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 2.0 + 3 * 4.0);
}

TEST(Ops, ElementwiseGradients) {
  Rng rng(2);
  Tensor a = random_parameter({3, 4}, rng), b = random_parameter({3, 4}, rng);
  Tensor pos = Tensor::parameter({3, 4}, [&] {
    std::vector<double> v(12);
    for (double& x : v) x = rng.uniform(0.5, 2.0);
    return v;
  }());
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::mul(ops::sigmoid(a), ops::tanh(b))); }, {{"a", a}, {"b", b}}));
  expect_grad_ok(gradcheck([&] { return ops::mean(ops::sub(ops::square(a), ops::scale(b, 3.0))); }, {{"a", a}, {"b", b}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::log(pos)); }, {{"pos", pos}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::mul(ops::leaky_relu(a, 0.1), b)); }, {{"a", a}, {"b", b}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::mul(ops::relu(a), b)); }, {{"a", a}, {"b", b}}));
}

TEST(Ops, SigmoidIsStableForLargeInputs) {
  const Tensor y = ops::sigmoid(Tensor::constant({4}, {-800.0, -40.0, 40.0, 800.0}));
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_DOUBLE_EQ(y.at(3), 1.0);
  EXPECT_GE(y.at(0), 0.0);
}

TEST(Ops, MatmulMatchesLoopAndGradients) {
  Rng rng(3);
  Tensor a = random_parameter({3, 5}, rng), b = random_parameter({5, 2}, rng);
  const Tensor c = ops::matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a.at(i * 5 + k) * b.at(k * 2 + j);
      EXPECT_NEAR(c.at(i * 2 + j), s, 1e-12);
    }
  Tensor w = random_parameter({4, 5}, rng), bias = random_parameter({4}, rng);
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::square(ops::matmul(a, b))); }, {{"a", a}, {"b", b}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::tanh(ops::linear(a, w, bias))); },
                           {{"a", a}, {"w", w}, {"bias", bias}}));
  EXPECT_THROW(ops::matmul(a, a), ShapeError);
}

TEST(Ops, RowOperationsGradients) {
  Rng rng(4);
  Tensor x = random_parameter({5, 3}, rng), y = random_parameter({2, 3}, rng), z = random_parameter({5, 2}, rng);
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::square(ops::gather_rows(x, {4, 0, 0, 2}))); }, {{"x", x}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::tanh(ops::slice_rows(x, 1, 3))); }, {{"x", x}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::square(ops::concat_rows({x, y}))); }, {{"x", x}, {"y", y}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::sigmoid(ops::concat_cols({x, z}))); }, {{"x", x}, {"z", z}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::square(ops::segment_mean(x, {0, 2, 5}))); }, {{"x", x}}));
  EXPECT_THROW(ops::gather_rows(x, {5}), ShapeError);
  EXPECT_THROW(ops::slice_rows(x, 4, 2), ShapeError);
}

TEST(Ops, SegmentMeanIsOrderIndependentBitForBit) {
  Rng rng(5);
  std::vector<double> v = random_values(7 * 4, rng, 1e3);
  const Tensor x = Tensor::constant({7, 4}, v);
  const Tensor reference = ops::segment_mean(x, {0, 7});
  std::vector<std::size_t> order{0, 1, 2, 3, 4, 5, 6};
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(order);
    const Tensor shuffled = ops::gather_rows(x, order);
    const Tensor m = ops::segment_mean(shuffled, {0, 7});
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(m.at(j), reference.at(j));
  }
}

TEST(Ops, SoftmaxAndCrossEntropyMatchLoopOracle) {
  Rng rng(6);
  Tensor logits = random_parameter({6, 5}, rng, 3.0);
  const std::vector<std::size_t> labels{0, 4, 2, 2, 1, 3};
  EXPECT_NEAR(ops::cross_entropy(logits, labels).item(), cross_entropy_oracle(to_matrix(logits), labels), 1e-12);
  const Tensor p = ops::softmax_rows(logits);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  expect_grad_ok(gradcheck([&] { return ops::cross_entropy(logits, labels); }, {{"logits", logits}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::log(ops::pick(ops::softmax_rows(logits), labels))); },
                           {{"logits", logits}}));
  EXPECT_THROW(ops::cross_entropy(logits, {0, 1, 2, 3, 4, 5}), ShapeError);
  EXPECT_THROW(ops::cross_entropy(logits, {0, 1}), ShapeError);
}

TEST(Ops, DistanceAndNormalizationGradients) {
  Rng rng(7);
  Tensor a = random_parameter({4, 3}, rng), b = random_parameter({2, 3}, rng);
  Tensor pos = Tensor::parameter({3, 3}, random_values(9, rng));
  for (double& v : pos.mutable_data()) v = std::abs(v) + 0.1;
  const Tensor d = ops::pairwise_sqdist(a, b);
  double d01 = 0.0;
  for (std::size_t j = 0; j < 3; ++j) d01 += std::pow(a.at(0 * 3 + j) - b.at(1 * 3 + j), 2);
  EXPECT_NEAR(d.at(1), d01, 1e-12);
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::tanh(ops::pairwise_sqdist(a, b))); }, {{"a", a}, {"b", b}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::mul(ops::l2_normalize_rows(a), a)); }, {{"a", a}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::square(ops::row_normalize(pos))); }, {{"pos", pos}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::square(ops::pairwise_absdiff(a))); }, {{"a", a}}));
  EXPECT_THROW(ops::l2_normalize_rows(Tensor::zeros({1, 3})), Error);
}

TEST(Ops, Im2colConvMatchesDirectConvolution) {
  Rng rng(8);
  const std::size_t n = 2, h = 5, w = 4, c = 2, f = 3, k = 3;
  Tensor x = random_parameter({n, h, w, c}, rng);
  Tensor weight = random_parameter({f, k * k * c}, rng);
  Tensor bias = random_parameter({f}, rng);
  const Tensor y = ops::conv2d(x, weight, k, bias);
  ASSERT_EQ(y.shape(), (Shape{n, h, w, f}));
  auto X = [&](std::size_t b, long yy, long xx, std::size_t ch) {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
    return x.at(((b * h + yy) * w + xx) * c + ch);
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t yy = 0; yy < h; ++yy)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t o = 0; o < f; ++o) {
          double s = bias.at(o);
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx)
              for (std::size_t ch = 0; ch < c; ++ch)
                s += weight.at(o * k * k * c + (dy * k + dx) * c + ch) *
                     X(b, static_cast<long>(yy + dy) - 1, static_cast<long>(xx + dx) - 1, ch);
          EXPECT_NEAR(y.at(((b * h + yy) * w + xx) * f + o), s, 1e-12);
        }
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::tanh(ops::conv2d(x, weight, k, bias))); },
                           {{"x", x}, {"weight", weight}, {"bias", bias}}));
  EXPECT_THROW(ops::conv2d(x, weight, 2, bias), ShapeError);
}

TEST(Ops, BatchNormNormalizesAndDifferentiates) {
  Rng rng(9);
  Tensor x = random_parameter({6, 4}, rng, 2.0);
  Tensor gamma = random_parameter({4}, rng), beta = random_parameter({4}, rng);
  ops::ChannelStats stats;
  const Tensor y = ops::batch_norm_train(x, Tensor::constant({4}, {1, 1, 1, 1}), Tensor::zeros({4}), 1e-5, &stats);
  for (std::size_t ch = 0; ch < 4; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 6; ++i) mean += y.at(i * 4 + ch) / 6.0;
    for (std::size_t i = 0; i < 6; ++i) var += std::pow(y.at(i * 4 + ch) - mean, 2) / 6.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
  ASSERT_EQ(stats.mean.size(), 4u);
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::tanh(ops::batch_norm_train(x, gamma, beta, 1e-5))); },
                           {{"x", x}, {"gamma", gamma}, {"beta", beta}}));
  const std::vector<double> zero(4, 0.0), one(4, 1.0);
  const Tensor e = ops::batch_norm_eval(x, gamma, beta, zero, one, 0.0);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_NEAR(e.at(i * 4 + 1), gamma.at(1) * x.at(i * 4 + 1) + beta.at(1), 1e-12);
}

TEST(Ops, PoolingForwardAndGradients) {
  // 1 x 2 x 2 x 1 input with a tie: the first maximum wins.
  const Tensor t = Tensor::constant({1, 2, 2, 1}, {1.0, 3.0, 3.0, 2.0});
  EXPECT_EQ(ops::max_pool2(t).at(0), 3.0);
  Tensor tp = Tensor::parameter({1, 2, 2, 1}, {1.0, 3.0, 3.0, 2.0});
  ops::sum(ops::max_pool2(tp)).backward();
  EXPECT_EQ(std::vector<double>(tp.grad().begin(), tp.grad().end()),
            (std::vector<double>{0, 1, 0, 0}));

  Rng rng(10);
  Tensor x = random_parameter({2, 5, 4, 3}, rng);
  EXPECT_EQ(ops::max_pool2(x).shape(), (Shape{2, 2, 2, 3}));  // floor on odd sizes
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::square(ops::max_pool2(x))); }, {{"x", x}}));
  expect_grad_ok(gradcheck([&] { return ops::sum(ops::square(ops::global_avg_pool(x))); }, {{"x", x}}));
}

TEST(Rng, StreamsAreDeterministicAndSerializable) {
  Rng a(42), b(42);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  a.normal();  // leaves a cached spare
  Rng c = Rng::deserialize(a.serialize());
  EXPECT_TRUE(c == a);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.normal(), c.normal());
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
  for (int i = 0; i < 1000; ++i) {
    const std::size_t v = a.below(7);
    EXPECT_LT(v, 7u);
    const double u = a.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(ParamStore, CloneIsDeepAndFingerprintTracksValues) {
  Rng rng(11);
  ParamStore s;
  s.add_uniform("w", {3, 2}, 2, rng);
  s.add_buffer("running", {1.0, 2.0});
  ParamStore c = s.clone();
  EXPECT_EQ(c.fingerprint(), s.fingerprint());
  c.param("w").mutable_data()[0] += 1.0;
  EXPECT_NE(c.fingerprint(), s.fingerprint());
  EXPECT_FALSE(c.param("w").same_node(s.param("w")));
  EXPECT_THROW(s.add_constant("w", {1}, 0.0), Error);
  EXPECT_THROW(s.param("missing"), Error);
  EXPECT_EQ(s.parameter_count(), 6u);
}

TEST(Adam, MatchesHandComputedFirstStepsAndSkipsUntouched) {
  ParamStore s;
  s.add("a", {1}, {1.0});
  s.add("b", {1}, {5.0});
  Adam adam;
  adam.weight_decay = 0.5;
  // loss = 3a; gradient 3 plus decay 0.5 * a.
  ops::scale(ops::sum(s.param("a")), 3.0).backward();
  adam.step("g", s, 0.1);
  // First Adam step moves by lr * sign(g) (up to eps).
  EXPECT_NEAR(s.param("a").at(0), 1.0 - 0.1, 1e-7);
  EXPECT_DOUBLE_EQ(s.param("b").at(0), 5.0);
  EXPECT_EQ(adam.slots().count("g/b"), 0u);
  EXPECT_EQ(adam.slots().at("g/a").steps, 1u);

  // Second step with an oracle recomputation.
  s.zero_grad();
  ops::scale(ops::sum(s.param("a")), 3.0).backward();
  const double a1 = s.param("a").at(0);
  const double g1 = 3.0 + 0.5 * 1.0, g2 = 3.0 + 0.5 * a1;
  const double m = 0.9 * (0.1 * g1) + 0.1 * g2, v = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2;
  const double expected = a1 - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  adam.step("g", s, 0.1);
  EXPECT_NEAR(s.param("a").at(0), expected, 1e-12);
}

TEST(Ops, ReluPropagatesNaN) {
  const Tensor x = Tensor::constant({3}, {-1.0, std::nan(""), 2.0});
  const auto y = to_vector(ops::relu(x));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_TRUE(std::isnan(y[1]));
  EXPECT_EQ(y[2], 2.0);
}
