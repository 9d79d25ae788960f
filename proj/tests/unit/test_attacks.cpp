#include <gtest/gtest.h>

#include "advlab/attacks.hpp"
#include "../support/oracles.hpp"

using namespace advlab;

namespace {

Sample random_sample(oracle::Gen& g, std::size_t n, std::size_t k) { return {g.point(n), std::size_t{g.index(0, k - 1)}}; }

void expect_in_box(const Vec& adv, const Vec& x, double eps) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_GE(adv[i], 0.0);
    ASSERT_LE(adv[i], 1.0);
    ASSERT_LE(std::abs(adv[i] - x[i]), eps + 1e-12);
  }
}

}  // namespace

TEST(Fgsm, MovesEachCoordinateByEpsilonTowardLossIncrease) {
  oracle::Gen g(1);
  const Model m = g.model(5, 3);
  Sample s{Vec{0.5, 0.5, 0.5, 0.5, 0.5}, std::size_t{1}};
  const Vec grad = input_gradient(m, s.x, s.y);
  const AttackResult r = fgsm(m, s, 0.1);
  for (std::size_t i = 0; i < 5; ++i) {
    const double expect = grad[i] > 0 ? 0.6 : (grad[i] < 0 ? 0.4 : 0.5);
    EXPECT_DOUBLE_EQ(r.x_adv[i], expect);
  }
  EXPECT_GE(loss(m, r.x_adv, s.y), loss(m, s.x, s.y));
}

TEST(Fgsm, ZeroEpsilonIsIdentity) {
  oracle::Gen g(2);
  const Model m = g.model(4, 2);
  const Sample s = random_sample(g, 4, 2);
  EXPECT_EQ(fgsm(m, s, 0.0).x_adv, s.x);
}

TEST(Fgsm, NegativeEpsilonRejected) {
  oracle::Gen g(2);
  const Model m = g.model(4, 2);
  EXPECT_THROW(fgsm(m, random_sample(g, 4, 2), -0.1), ParameterError);
}

TEST(Attacks, InputOutsideUnitBoxRejected) {
  oracle::Gen g(2);
  const Model m = g.model(2, 2);
  EXPECT_THROW(fgsm(m, Sample{Vec{1.5, 0.2}, std::size_t{0}}, 0.1), ParameterError);
}

TEST(Bim, SingleFullStepEqualsFgsm) {
  oracle::Gen g(3);
  for (int t = 0; t < 50; ++t) {
    const Model m = g.model(6, 3);
    const Sample s = random_sample(g, 6, 3);
    const double eps = g.range(0.0, 0.5);
    AttackConfig c;
    c.epsilon = eps;
    c.alpha = eps > 0 ? eps : 1e-3;
    c.iterations = 1;
    if (eps == 0.0) continue;
    EXPECT_EQ(bim(m, s, c).x_adv, fgsm(m, s, eps).x_adv);
  }
}

TEST(MiFgsm, ZeroDecayEqualsBim) {
  oracle::Gen g(4);
  for (int t = 0; t < 50; ++t) {
    const Model m = g.model(6, 3);
    const Sample s = random_sample(g, 6, 3);
    AttackConfig c;
    c.epsilon = g.range(0.05, 0.4);
    c.alpha = g.range(0.01, c.epsilon);
    c.iterations = g.index(1, 8);
    c.momentum_decay = 0.0;
    EXPECT_EQ(mifgsm(m, s, c).x_adv, bim(m, s, c).x_adv);
  }
}

TEST(MiFgsm, MomentumRecurrenceHolds) {
  oracle::Gen g(5);
  const Model m = g.model(4, 3);
  const Sample s = random_sample(g, 4, 3);
  AttackConfig c;
  c.epsilon = 0.3;
  c.alpha = 0.05;
  c.iterations = 5;
  c.momentum_decay = 0.7;
  MomentumTrace tr;
  mifgsm(m, s, c, &tr);
  ASSERT_EQ(tr.momentum.size(), 5u);
  for (std::size_t t = 0; t < 5; ++t) {
    double l1 = 0;
    for (double v : tr.normalized_gradients[t]) l1 += std::abs(v);
    EXPECT_NEAR(l1, 1.0, 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
      const double prev = t == 0 ? 0.0 : tr.momentum[t - 1][i];
      EXPECT_NEAR(tr.momentum[t][i], 0.7 * prev + tr.normalized_gradients[t][i], 1e-15);
    }
  }
}

TEST(Illc, TargetsLeastLikelyClass) {
  oracle::Gen g(6);
  const Model m = g.model(4, 4);
  const Sample s = random_sample(g, 4, 4);
  AttackConfig c;
  c.epsilon = 0.2;
  c.alpha = 0.05;
  const AttackResult r = illc(m, s, c);
  ASSERT_TRUE(r.target.has_value());
  EXPECT_EQ(*r.target, argmin(forward(m, s.x).output));
}

TEST(Attacks, IterativeAttacksStayInBox) {
  oracle::Gen g(7);
  for (int t = 0; t < 100; ++t) {
    const Model m = g.model(5, 3);
    const Sample s = random_sample(g, 5, 3);
    AttackConfig c;
    c.epsilon = g.range(0.0, 0.5);
    c.alpha = g.range(0.01, 0.3);
    c.iterations = g.index(1, 12);
    c.momentum_decay = g.unit();
    expect_in_box(bim(m, s, c).x_adv, s.x, c.epsilon);
    expect_in_box(illc(m, s, c).x_adv, s.x, c.epsilon);
    expect_in_box(mifgsm(m, s, c).x_adv, s.x, c.epsilon);
  }
}

TEST(GrowthBound, EqualsEpsilonTimesMeanAbsTimesDim) {
  const Vec w{0.5, -1.5, 2.0, 0.0};
  const GrowthBound b = perturbation_growth_bound(w, 0.1);
  EXPECT_NEAR(b.activation_delta, 0.1 * (0.5 + 1.5 + 2.0), 1e-15);
  EXPECT_NEAR(b.bound, 0.1 * (4.0 / 4.0) * 4.0, 1e-15);
}

// Hand evaluation of single-feature saliency on a fixed 3x3 Jacobian.
TEST(JsmaSaliency, HandEvaluatedThreeClassCase) {
  Matrix j(3, 3);
  // columns: feature 0, 1, 2
  j(0, 0) = 0.4;  j(0, 1) = -0.2; j(0, 2) = 0.3;
  j(1, 0) = -0.1; j(1, 1) = 0.5;  j(1, 2) = -0.4;
  j(2, 0) = -0.2; j(2, 1) = 0.1;  j(2, 2) = 0.2;
  const Vec inc = jsma_saliency(j, 0, SaliencyDirection::increase);
  // f0: jt .4, others -.3 -> .4*.3 ; f1: jt<0 -> 0 ; f2: others -.2 -> .3*.2
  EXPECT_NEAR(inc[0], 0.4 * 0.3, 1e-15);
  EXPECT_EQ(inc[1], 0.0);
  EXPECT_NEAR(inc[2], 0.3 * 0.2, 1e-15);
  const Vec dec = jsma_saliency(j, 1, SaliencyDirection::decrease);
  // f0: jt -.1, others .2 -> .1*.2 ; f1: jt>0 -> 0 ; f2: jt -.4, others .5 -> .4*.5
  EXPECT_NEAR(dec[0], 0.1 * 0.2, 1e-15);
  EXPECT_EQ(dec[1], 0.0);
  EXPECT_NEAR(dec[2], 0.4 * 0.5, 1e-15);
}

TEST(JsmaSaliency, RandomJacobiansMatchOracle) {
  oracle::Gen g(8);
  for (int t = 0; t < 200; ++t) {
    const Matrix j = g.matrix(3, 6, -1.0, 1.0);
    const std::size_t target = g.index(0, 2);
    const Vec inc = jsma_saliency(j, target, SaliencyDirection::increase);
    const Vec dec = jsma_saliency(j, target, SaliencyDirection::decrease);
    for (std::size_t i = 0; i < 6; ++i) {
      const double a = j(target, i);
      double b = 0;
      for (std::size_t c = 0; c < 3; ++c)
        if (c != target) b += j(c, i);
      EXPECT_EQ(inc[i], (a < 0 || b > 0) ? 0.0 : a * std::abs(b));
      EXPECT_EQ(dec[i], (a > 0 || b < 0) ? 0.0 : std::abs(a) * b);
    }
  }
}

TEST(Jsma, ModifiedFractionWithinBudget) {
  oracle::Gen g(9);
  for (int t = 0; t < 40; ++t) {
    const Model m = g.model(14, 3);
    const Sample s = random_sample(g, 14, 3);
    AttackConfig c;
    c.upsilon = g.range(0.0, 0.6);
    c.theta = g.range(0.1, 1.0);
    const AttackResult r = jsma(m, s, g.index(0, 2), c);
    EXPECT_LE(r.modified_fraction, c.upsilon + 1e-12);
    for (std::size_t i = 0; i < 14; ++i) EXPECT_GE(r.x_adv[i], s.x[i]);
  }
}

TEST(Jsma, RespectsEpsilonBox) {
  oracle::Gen g(12);
  for (int t = 0; t < 40; ++t) {
    const Model m = g.model(10, 3);
    const Sample s = random_sample(g, 10, 3);
    AttackConfig c;
    c.epsilon = g.range(0.0, 0.4);
    c.theta = g.range(0.05, 1.0);
    c.upsilon = 0.6;
    expect_in_box(jsma(m, s, g.index(0, 2), c).x_adv, s.x, c.epsilon);
  }
}

TEST(Jsma, ZeroUpsilonLeavesInputUnchanged) {
  oracle::Gen g(13);
  const Model m = g.model(6, 3);
  const Sample s = random_sample(g, 6, 3);
  AttackConfig c;
  c.upsilon = 0.0;
  const std::size_t pred = predict(m, s.x);
  const AttackResult r = jsma(m, s, (pred + 1) % 3, c);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.x_adv, s.x);
}

TEST(Jsma, TargetOutsideRangeRejected) {
  oracle::Gen g(10);
  const Model m = g.model(4, 3);
  EXPECT_THROW(jsma(m, random_sample(g, 4, 3), 5, AttackConfig{}), ParameterError);
}

TEST(AttackConfig, ValidationRejectsBadValues) {
  AttackConfig c;
  c.momentum_decay = 1.5;
  EXPECT_THROW(c.validate(), ParameterError);
  c = AttackConfig{};
  c.iterations = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = AttackConfig{};
  c.theta = 0.0;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(GrowthBound, ThousandRandomWeights) {
  Rng rng(3);
  Vec w(1000);
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  const double eps = 0.07;
  double sum_abs = 0.0;
  for (double v : w) sum_abs += std::abs(v);
  const GrowthBound b = perturbation_growth_bound(w, eps);
  EXPECT_NEAR(b.activation_delta, eps * sum_abs, 1e-12);
  EXPECT_NEAR(b.bound, eps * sum_abs, 1e-12);
}

// With no hidden layer, d loss / dx = sum_k (p_k - [k=y]) w_k, whose sign for
// two classes is sign(w_{y'} - w_y).
TEST(Fgsm, LinearModelClosedForm) {
  oracle::Gen g(14);
  for (int t = 0; t < 40; ++t) {
    Model m = make_model({6, 2}, Activation::relu, 100 + t);
    const Sample s{g.point(6), std::size_t{g.index(0, 1)}};
    const std::size_t y = hard_label(s.y), other = 1 - y;
    const double eps = g.range(0.01, 0.3);
    const AttackResult r = fgsm(m, s, eps);
    for (std::size_t i = 0; i < 6; ++i) {
      const double d = m.weights[0](other, i) - m.weights[0](y, i);
      const double expect = std::clamp(s.x[i] + eps * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)), 0.0, 1.0);
      EXPECT_DOUBLE_EQ(r.x_adv[i], expect);
    }
  }
}

// Two classes, two features; our Jacobian rows are classes.
TEST(JsmaSaliency, TwoByTwoHandCase) {
  Matrix j(2, 2);
  j(0, 0) = 0.5;  j(1, 0) = -0.5;
  j(0, 1) = -0.2; j(1, 1) = 0.2;
  const Vec inc = jsma_saliency(j, 0, SaliencyDirection::increase);
  EXPECT_NEAR(inc[0], 0.25, 1e-15);
  EXPECT_EQ(inc[1], 0.0);
  const Vec dec = jsma_saliency(j, 0, SaliencyDirection::decrease);
  EXPECT_EQ(dec[0], 0.0);
  EXPECT_NEAR(dec[1], 0.2 * 0.2, 1e-15);
}

TEST(JsmaSaliency, IncreaseAndDecreaseSupportsAreDisjoint) {
  oracle::Gen g(15);
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = g.index(2, 5), n = g.index(1, 9);
    Matrix j(k, n);
    for (double& v : j.data) v = g.range(-1.0, 1.0);
    const std::size_t target = g.index(0, k - 1);
    const Vec inc = jsma_saliency(j, target, SaliencyDirection::increase);
    const Vec dec = jsma_saliency(j, target, SaliencyDirection::decrease);
    for (std::size_t i = 0; i < n; ++i) ASSERT_FALSE(inc[i] > 0.0 && dec[i] > 0.0);
  }
}
