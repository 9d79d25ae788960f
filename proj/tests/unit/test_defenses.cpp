#include <gtest/gtest.h>

#include "advlab/defenses.hpp"
#include "advlab/squeeze.hpp"
#include "advlab/svd.hpp"
#include "../support/oracles.hpp"

using namespace advlab;

TEST(BitDepth, HandValues) {
  const Vec out = reduce_bit_depth(Vec{0.0, 0.2, 0.49, 0.51, 1.0}, 1);
  EXPECT_EQ(out, (Vec{0.0, 0.0, 0.0, 1.0, 1.0}));
  const Vec two = reduce_bit_depth(Vec{0.2, 0.5}, 2);  // levels 0, 1/3, 2/3, 1
  EXPECT_DOUBLE_EQ(two[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(two[1], 2.0 / 3.0);
}

TEST(BitDepth, IdempotentOnRandomValues) {
  oracle::Gen g(1);
  for (int t = 0; t < 2000; ++t) {
    const int bits = static_cast<int>(g.index(1, 7));
    const Vec once = reduce_bit_depth(g.point(5), bits);
    EXPECT_EQ(reduce_bit_depth(once, bits), once);
  }
}

TEST(BitDepth, RejectsOutOfRangeDepth) {
  EXPECT_THROW(reduce_bit_depth(Vec{0.5}, 0), ParameterError);
  EXPECT_THROW(reduce_bit_depth(Vec{0.5}, 8), ParameterError);
}

TEST(Median, HandComputedCorner) {
  Matrix img(2, 2);
  img.data = {0.1, 0.9, 0.5, 0.3};
  const Matrix out = median_smooth(img);
  // (0,0): window of duplicated edge = {0.1,0.1,0.1,0.1}
  EXPECT_DOUBLE_EQ(out(0, 0), 0.1);
  // (1,1): {0.1,0.9,0.5,0.3} sorted -> 0.1,0.3,0.5,0.9 -> upper middle 0.5
  EXPECT_DOUBLE_EQ(out(1, 1), 0.5);
}

TEST(Median, MatchesSlidingWindowOracle) {
  oracle::Gen g(2);
  for (int t = 0; t < 30; ++t) {
    const Matrix img = g.matrix(g.index(1, 9), g.index(1, 9));
    const Matrix a = median_smooth(img), b = oracle::median2x2(img);
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-10);
  }
}

TEST(NonLocal, MatchesBruteForceOracle) {
  oracle::Gen g(3);
  for (int t = 0; t < 20; ++t) {
    NonLocalConfig c;
    c.search_window = 2 * g.index(1, 2) + 1;
    c.patch_size = 2 * g.index(0, c.search_window / 2) + 1;
    c.h = g.range(0.2, 1.0);
    c.sigma = g.range(0.5, 2.0);
    const Matrix img = g.matrix(g.index(2, 8), g.index(2, 8));
    const Matrix a = nonlocal_smooth(img, c);
    const Matrix b = oracle::nl_means(img, c.search_window, c.patch_size, c.h, c.sigma);
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-10);
  }
}

TEST(NonLocal, ConstantImageUnchanged) {
  Matrix img(4, 5);
  for (double& v : img.data) v = 0.37;
  const Matrix out = nonlocal_smooth(img, NonLocalConfig{});
  for (double v : out.data) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(NonLocal, EvenWindowRejected) {
  NonLocalConfig c;
  c.search_window = 4;
  EXPECT_THROW(nonlocal_smooth(Matrix(3, 3), c), ParameterError);
}

TEST(Svd, SingularValuesMatchPowerIteration) {
  oracle::Gen g(4);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = g.matrix(g.index(2, 8), g.index(2, 8), -1.0, 1.0);
    const SvdResult s = svd_decompose(a);
    const Vec ref = oracle::singular_values_power(a);
    ASSERT_EQ(s.s.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(s.s[i], ref[i], 1e-6) << "trial " << t;
  }
}

TEST(Svd, FactorsReconstructInput) {
  oracle::Gen g(5);
  const Matrix a = g.matrix(5, 7);
  const SvdResult s = svd_decompose(a);
  const Matrix back = svd_reconstruct(s, s.s.size());
  EXPECT_LE(frobenius_norm(subtract(a, back)), 1e-10);
  const Matrix utu = matmul(transpose(s.u), s.u);
  for (std::size_t i = 0; i < utu.rows; ++i)
    for (std::size_t j = 0; j < utu.cols; ++j) EXPECT_NEAR(utu(i, j), i == j ? 1.0 : 0.0, 1e-10);
}

TEST(Svd, RankDeficientInputConverges) {
  Matrix a(8, 8);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) a(r, c) = (r < 4 ? 1.0 : 0.0) * (c % 2 ? 0.5 : 1.0);
  const SvdResult s = svd_decompose(a);
  EXPECT_EQ(s.rank, 1u);
}

TEST(Svd, RankKErrorEqualsTailEnergy) {
  oracle::Gen g(6);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = g.matrix(8, 8);
    const std::size_t k = g.index(1, 7);
    const RankKApproximation r = rank_k_approx(a, k);
    EXPECT_NEAR(r.error, r.tail, 1e-8);
  }
}

TEST(Svd, RankOutOfRangeRejected) { EXPECT_THROW(rank_k_approx(Matrix(3, 3), 4), ParameterError); }

TEST(Svd, DenoiseClampsToUnitBox) {
  oracle::Gen g(7);
  const Matrix out = svd_denoise(g.matrix(8, 8), 2);
  for (double v : out.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Pipeline, AppliesLeftToRight) {
  const ImageShape shape{2, 2};
  const SqueezePipeline p{BitDepthSqueeze{1}, MedianSqueeze{}};
  const Vec x{0.1, 0.9, 0.6, 0.2};
  const Vec expect = median_smooth(image_from_vector(reduce_bit_depth(x, 1), shape)).data;
  EXPECT_EQ(apply_pipeline(p, x, shape), expect);
}

TEST(Pipeline, IdentityIsExact) {
  const Vec x{0.1, 0.2, 0.3};
  EXPECT_EQ(apply_pipeline({IdentitySqueeze{}}, x, std::nullopt), x);
}

TEST(Pipeline, ImageOpOnVectorDataIsConfigError) {
  EXPECT_THROW(apply_pipeline({MedianSqueeze{}}, Vec{0.1, 0.2}, std::nullopt), ConfigError);
}

TEST(AdversarialTraining, ZeroMixEqualsPlainTraining) {
  oracle::Gen g(8);
  std::vector<Sample> data;
  for (int i = 0; i < 40; ++i) data.push_back({g.point(2), std::size_t(i % 2)});
  const Model init = make_model({2, 6, 2}, Activation::relu, 3);
  AdversarialTrainConfig c;
  c.mix_ratio = 0.0;
  c.train = TrainConfig{5, 0.1, 8, 0.9, 4, true};
  EXPECT_EQ(adversarial_train(init, data, c).model.weights[1].data,
            train_sgd(init, data, c.train).model.weights[1].data);
}

TEST(AdversarialTraining, MixRatioOutsideUnitRejected) {
  std::vector<Sample> data{{Vec{0.1, 0.2}, std::size_t{0}}};
  AdversarialTrainConfig c;
  c.mix_ratio = 1.5;
  EXPECT_THROW(adversarial_train(make_model({2, 2, 2}, Activation::relu, 1), data, c), ParameterError);
}

TEST(Distillation, ReturnsUnitTemperatureModels) {
  Dataset d = gen_moons(60, 0.1, 1);
  DistillConfig c;
  c.temperature = 20.0;
  c.hidden = {8};
  c.teacher.epochs = c.student.epochs = 5;
  c.teacher.lr = c.student.lr = 0.1;
  const DistillResult r = distill(d, c, 3);
  EXPECT_EQ(r.teacher.temperature, 1.0);
  EXPECT_EQ(r.student.temperature, 1.0);
  EXPECT_EQ(r.student_loss.size(), 5u);
}

TEST(Distillation, TemperatureMustExceedOne) {
  DistillConfig c;
  c.temperature = 1.0;
  EXPECT_THROW(distill(gen_moons(10, 0.1, 1), c, 1), ParameterError);
}

TEST(BitDepth, ThreeBitsHalf) { EXPECT_DOUBLE_EQ(reduce_bit_depth(Vec{0.5}, 3)[0], 4.0 / 7.0); }

TEST(Median, SaltPixelAgainstWindowOracle) {
  Matrix centre(3, 3);
  centre(1, 1) = 1.0;
  const Matrix a = median_smooth(centre);
  EXPECT_EQ(a.data, oracle::median2x2(centre).data);
  for (double v : a.data) EXPECT_EQ(v, 0.0);

  // A corner pixel is duplicated by the reflected border.
  Matrix corner(3, 3);
  corner(0, 0) = 1.0;
  const Matrix b = median_smooth(corner);
  EXPECT_EQ(b.data, oracle::median2x2(corner).data);
  EXPECT_EQ(b(0, 0), 1.0);
  EXPECT_EQ(b(2, 2), 0.0);
}

TEST(NonLocal, FiveByFiveWindowFivePatchThree) {
  oracle::Gen g(31);
  NonLocalConfig c;
  c.search_window = 5;
  c.patch_size = 3;
  c.h = 0.5;
  const Matrix img = g.matrix(5, 5);
  const Matrix a = nonlocal_smooth(img, c);
  const Matrix b = oracle::nl_means(img, 5, 3, 0.5, c.sigma);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-10);
}

TEST(Svd, EightBySixAgainstPowerIteration) {
  oracle::Gen g(32);
  const Matrix a = g.matrix(8, 6, -1.0, 1.0);
  const SvdResult s = svd_decompose(a);
  const Vec ref = oracle::singular_values_power(a);
  ASSERT_EQ(s.s.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(s.s[i], ref[i], 1e-6);
}

TEST(Svd, RankThreeBeatsRandomRankThree) {
  oracle::Gen g(33);
  const Matrix a = g.matrix(8, 8);
  const double best = rank_k_approx(a, 3).error;
  for (int t = 0; t < 200; ++t) {
    Matrix b(8, 3), c(3, 8);
    for (double& v : b.data) v = g.range(-1.0, 1.0);
    for (double& v : c.data) v = g.range(-1.0, 1.0);
    ASSERT_LE(best, frobenius_norm(subtract(a, matmul(b, c))) + 1e-12);
  }
}
