#include <gtest/gtest.h>

#include "advlab/nn.hpp"
#include "../support/oracles.hpp"

using namespace advlab;

TEST(Softmax, TwoLogitHandValue) {
  const Vec p = softmax_t(Vec{2.0, 0.0}, 1.0);
  EXPECT_NEAR(p[0], 0.8807970779778823, 1e-12);
  EXPECT_NEAR(p[1], 0.11920292202211755, 1e-12);
}

TEST(Softmax, TemperatureFlattens) {
  const Vec hot = softmax_t(Vec{2.0, 0.0}, 1.0);
  const Vec cold = softmax_t(Vec{2.0, 0.0}, 100.0);
  EXPECT_LT(cold[0], hot[0]);
  EXPECT_NEAR(cold[0], 1.0 / (1.0 + std::exp(-0.02)), 1e-12);
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Vec p = softmax_t(Vec{1000.0, 999.0, -1000.0}, 1.0);
  double s = 0;
  for (double v : p) {
    EXPECT_TRUE(std::isfinite(v));
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  EXPECT_THROW(softmax_t(Vec{1.0, 2.0}, 0.0), ParameterError);
}

TEST(Forward, ShapeMismatchThrows) {
  const Model m = make_model({3, 4, 2}, Activation::relu, 1);
  EXPECT_THROW(forward(m, Vec{0.1, 0.2}), ShapeError);
}

TEST(Forward, HandComputedTinyNet) {
  Model m = zero_model({2, 2, 2}, Activation::relu);
  m.weights[0](0, 0) = 1.0;
  m.weights[0](1, 1) = -1.0;
  m.biases[0] = {0.0, 0.5};
  m.weights[1](0, 0) = 2.0;
  m.weights[1](1, 1) = 1.0;
  const auto f = forward(m, Vec{0.3, 0.2});
  // hidden = relu(0.3, 0.3) ; logits = (0.6, 0.3)
  EXPECT_DOUBLE_EQ(f.logits[0], 0.6);
  EXPECT_DOUBLE_EQ(f.logits[1], 0.3);
  EXPECT_NEAR(f.output[0], 1.0 / (1.0 + std::exp(-0.3)), 1e-12);
}

TEST(Gradients, MatchFiniteDifferencesOnRandomModels) {
  oracle::Gen g(11);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t in = g.index(2, 6), k = g.index(2, 4);
    Model m = g.model(in, k);
    const Vec x = g.point(in);
    const std::size_t y = g.index(0, k - 1);
    EXPECT_LE(oracle::fd_gradient_error(m, x, y, 1e-5), 1e-4) << "trial " << trial;
    EXPECT_LE(oracle::fd_jacobian_error(m, x, 1e-5), 1e-4) << "trial " << trial;
  }
}

TEST(Gradients, TemperatureScalesLogitGradient) {
  oracle::Gen g(5);
  Model m = g.model(3, 3);
  m.hidden_activation = Activation::tanh;
  m.temperature = 20.0;
  const Vec x = g.point(3);
  EXPECT_LE(oracle::fd_gradient_error(m, x, 1, 1e-5), 1e-4);
}

TEST(Gradients, SoftLabelMatchesMixtureOfHardLabels) {
  oracle::Gen g(8);
  const Model m = g.model(4, 3);
  const Vec x = g.point(4);
  const Vec soft{0.2, 0.5, 0.3};
  const Vec gs = input_gradient(m, x, Label{soft});
  Vec mix(4, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    const Vec gc = input_gradient(m, x, Label{c});
    for (std::size_t i = 0; i < 4; ++i) mix[i] += soft[c] * gc[i];
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(gs[i], mix[i], 1e-12);
}

TEST(Gradients, SoftLabelMustSumToOne) {
  const Model m = make_model({2, 3, 2}, Activation::relu, 1);
  EXPECT_THROW(backward(m, Vec{0.1, 0.1}, Label{Vec{0.7, 0.7}}), ParameterError);
}

TEST(Training, SeparableProblemIsLearned) {
  std::vector<Sample> data;
  oracle::Gen g(3);
  for (int i = 0; i < 200; ++i) {
    Vec x = g.point(2);
    data.push_back({x, std::size_t{x[0] + x[1] > 1.0 ? 1u : 0u}});
  }
  const Model init = make_model({2, 8, 2}, Activation::tanh, 4);
  const TrainResult r = train_sgd(init, data, TrainConfig{150, 0.5, 16, 0.9, 1, true});
  EXPECT_GE(accuracy(r.model, data), 0.95);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
}

TEST(Training, SameSeedSameWeights) {
  std::vector<Sample> data;
  oracle::Gen g(3);
  for (int i = 0; i < 64; ++i) data.push_back({g.point(2), std::size_t(i % 2)});
  const Model init = make_model({2, 4, 2}, Activation::relu, 9);
  const TrainConfig cfg{5, 0.1, 8, 0.9, 77, true};
  EXPECT_EQ(train_sgd(init, data, cfg).model.weights[0].data, train_sgd(init, data, cfg).model.weights[0].data);
}

TEST(Training, DivergenceIsReported) {
  std::vector<Sample> data{{Vec{1.0, 1.0}, std::size_t{0}}, {Vec{0.0, 0.0}, std::size_t{1}}};
  const Model init = make_model({2, 4, 2}, Activation::tanh, 1);
  const double lr = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train_sgd(init, data, TrainConfig{3, lr, 2, 0.9, 1, true}), DivergenceError);
}

// Property: for any random model the softmax head is a distribution.
TEST(Property, OutputsAreDistributions) {
  oracle::Gen g(21);
  for (int t = 0; t < 200; ++t) {
    const std::size_t in = g.index(1, 10), k = g.index(2, 6);
    Model m = g.model(in, k);
    m.temperature = g.range(0.5, 50.0);
    const Vec p = forward(m, g.point(in)).output;
    double s = 0;
    for (double v : p) {
      ASSERT_GE(v, 0.0);
      s += v;
    }
    ASSERT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Softmax, UnitLogitGap) {
  const Vec p = softmax_t(Vec{1.0, 0.0}, 1.0);
  EXPECT_NEAR(p[0], 0.7311, 1e-4);
  EXPECT_NEAR(p[1], 0.2689, 1e-4);
}

TEST(Loss, SoftTargetEqualToProbsGivesEntropy) {
  oracle::Gen g(12);
  for (int t = 0; t < 50; ++t) {
    const Model m = g.model(3, 4);
    const Vec x = g.point(3);
    const Vec p = forward(m, x).output;
    double h = 0.0;
    for (double v : p) h -= v * std::log(v);
    EXPECT_NEAR(loss(m, x, Label{p}), h, 1e-12);
  }
}
