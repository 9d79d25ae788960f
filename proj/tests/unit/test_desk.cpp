// Small end-to-end desk runs with recorded baselines.
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "advlab/commands.hpp"

using namespace advlab;
namespace fs = std::filesystem;

namespace {

struct MoonsDesk {
  Dataset train, test;
  Model model;

  MoonsDesk() {
    std::tie(train, test) = split(gen_moons(600, 0.1, 7), 0.3, 11);
    model = train_sgd(make_model({2, 32, 32, 2}, Activation::relu, 3), train.samples,
                      TrainConfig{200, 0.1, 32, 0.9, 5})
                .model;
  }
};

struct DigitsDesk {
  Dataset train, test;
  Model model;

  DigitsDesk() {
    std::tie(train, test) = split(gen_digits8x8(1000, 21), 0.3, 22);
    model = train_sgd(make_model({64, 32, 10}, Activation::relu, 4), train.samples,
                      TrainConfig{60, 0.05, 32, 0.9, 5})
                .model;
  }
};

const MoonsDesk& moons() {
  static const MoonsDesk d;
  return d;
}

const DigitsDesk& digits() {
  static const DigitsDesk d;
  return d;
}

template <class Attack>
double success_rate(const Dataset& d, Attack&& attack) {
  std::size_t ok = 0;
  for (const auto& s : d.samples) ok += attack(s).success;
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

double attack_rate(const std::string& name, const Model& m, const Dataset& d, double eps) {
  AttackConfig c;
  c.epsilon = eps;
  c.alpha = eps > 0.0 ? eps / 4.0 : 0.01;
  c.iterations = 10;
  return success_rate(d, [&](const Sample& s) {
    if (name == "fgsm") return fgsm(m, s, eps);
    if (name == "bim") return bim(m, s, c);
    if (name == "illc") return illc(m, s, c);
    return mifgsm(m, s, c);
  });
}

void expect_monotone_in_epsilon(const std::string& name, const Model& m, const Dataset& d) {
  double prev = 0.0;
  for (int k = 0; k <= 6; ++k) {
    const double rate = attack_rate(name, m, d, 0.05 * k);
    EXPECT_GE(rate, prev - 0.02) << name << " at eps " << 0.05 * k;
    prev = std::max(prev, rate);
  }
}

}  // namespace

TEST(DeskTraining, MoonsFiveHundredReachesBaseline) {
  const Dataset d = gen_moons(500, 0.1, 7);
  const Model m = train_sgd(make_model({2, 16, 16, 2}, Activation::relu, 1), d.samples,
                            TrainConfig{200, 0.1, 32, 0.9, 1})
                      .model;
  EXPECT_GE(accuracy(m, d.samples), 0.95);
}

TEST(DeskTraining, DistantGaussiansAreFullySeparated) {
  const Dataset d = gen_gmm({{0.1, 0.1}, {0.9, 0.9}}, 1e-3, 200, 8);
  const Model m = train_sgd(make_model({2, 8, 2}, Activation::relu, 2), d.samples, TrainConfig{20, 0.1, 32, 0.9, 4}).model;
  EXPECT_EQ(accuracy(m, d.samples), 1.0);
}

TEST(DeskGradientCheck, TrainedModelAgreesWithFiniteDifferences) {
  const MoonsDesk& d = moons();
  for (std::size_t i = 0; i < 20; ++i) {
    const Sample& s = d.test.samples[i];
    EXPECT_LT(gradient_check(d.model, s.x, s.y, 1e-5), 1e-4) << "sample " << i;
  }
}

// Cancellation dominates once h is far below sqrt(machine epsilon).
TEST(DeskGradientCheck, TinyStepLosesPrecision) {
  const MoonsDesk& d = moons();
  const Sample& s = d.test.samples[0];
  EXPECT_GT(gradient_check(d.model, s.x, s.y, 1e-12), 100.0 * gradient_check(d.model, s.x, s.y, 1e-5));
}

TEST(DeskAttacks, FgsmLowersMoonsAccuracy) {
  const MoonsDesk& d = moons();
  const double clean = accuracy(d.model, d.test.samples);
  std::size_t ok = 0;
  for (const auto& s : d.test.samples) ok += predict(d.model, fgsm(d.model, s, 0.2).x_adv) == hard_label(s.y);
  EXPECT_LT(static_cast<double>(ok) / static_cast<double>(d.test.size()), clean);
}

TEST(DeskAttacks, BimAtLeastAsStrongAsFgsm) {
  const MoonsDesk& d = moons();
  AttackConfig c;
  c.epsilon = 0.2;
  c.alpha = 0.05;
  c.iterations = 10;
  const double b = success_rate(d.test, [&](const Sample& s) { return bim(d.model, s, c); });
  const double f = success_rate(d.test, [&](const Sample& s) { return fgsm(d.model, s, 0.2); });
  EXPECT_GE(b, f);
}

TEST(DeskAttacks, MomentumSweepBaseline) {
  const MoonsDesk& d = moons();
  const std::vector<std::pair<double, double>> table{{0.0, 0.9167}, {0.5, 0.9111}, {1.0, 0.8722}};
  for (const auto& [mu, expect] : table) {
    AttackConfig c;
    c.epsilon = 0.2;
    c.alpha = 0.05;
    c.iterations = 10;
    c.momentum_decay = mu;
    EXPECT_NEAR(success_rate(d.test, [&](const Sample& s) { return mifgsm(d.model, s, c); }), expect, 0.02)
        << "mu " << mu;
  }
}

TEST(DeskAttacks, SuccessGrowsWithEpsilonForIterativeAttacksOnMoons) {
  const MoonsDesk& d = moons();
  expect_monotone_in_epsilon("bim", d.model, d.test);
  expect_monotone_in_epsilon("illc", d.model, d.test);
}

TEST(DeskAttacks, SuccessGrowsWithEpsilonOnDigits) {
  const DigitsDesk& d = digits();
  for (const char* a : {"fgsm", "bim", "illc", "mifgsm"}) expect_monotone_in_epsilon(a, d.model, d.test);
}

TEST(DeskAttacks, LeastLikelyClassOnThreeBlobs) {
  auto [train, test] = split(gen_gmm({{0.2, 0.2}, {0.8, 0.2}, {0.5, 0.8}}, 0.1, 600, 5), 0.3, 6);
  const Model m = train_sgd(make_model({2, 16, 3}, Activation::relu, 2), train.samples,
                            TrainConfig{100, 0.1, 32, 0.9, 4})
                      .model;
  auto rate = [&](std::size_t n) {
    AttackConfig c;
    c.epsilon = 0.3;
    c.alpha = 0.05;
    c.iterations = n;
    return success_rate(test, [&](const Sample& s) { return illc(m, s, c); });
  };
  const double one = rate(1), ten = rate(10);
  EXPECT_GT(ten, 0.0);
  EXPECT_GT(ten, one);
}

TEST(DeskDetectors, IdentityCapableAutoencoderFitsTinyData) {
  Rng rng(4);
  std::vector<Vec> data;
  for (int i = 0; i < 8; ++i) {
    Vec v(4);
    for (double& x : v) x = rng.uniform(0.2, 0.8);
    data.push_back(v);
  }
  const Autoencoder ae = train_autoencoder(data, {8}, TrainConfig{500, 0.5, 8, 0.9, 3});
  EXPECT_LT(ae.train_mse, 1e-3);
}

TEST(DeskDetectors, KdeDensityHigherOnCleanDigits) {
  const DigitsDesk& d = digits();
  const KdeBanks banks = kde_fit(d.model, d.train);
  const double bw = kde_default_bandwidth(banks);
  double clean = 0.0, adv = 0.0;
  for (const auto& s : d.test.samples) {
    clean += kde_score(d.model, banks, s.x, bw);
    adv += kde_score(d.model, banks, fgsm(d.model, s, 0.2).x_adv, bw);
  }
  EXPECT_GT(clean, adv);
}

TEST(DeskDetectors, BinaryDetectorAtLargeEpsilon) {
  const DigitsDesk& d = digits();
  std::vector<Vec> clean, adv;
  for (const auto& s : d.train.samples) {
    clean.push_back(s.x);
    adv.push_back(fgsm(d.model, s, 0.3).x_adv);
  }
  const BinaryDetector det = binary_detector(d.model, clean, adv, 0, {16}, TrainConfig{100, 0.05, 32, 0.9, 3});
  std::vector<ScoredLabel> scores;
  for (const auto& s : d.test.samples) {
    scores.push_back({det.score(d.model, s.x), false});
    scores.push_back({det.score(d.model, fgsm(d.model, s, 0.3).x_adv), true});
  }
  const double auc = roc_auc(scores);
  EXPECT_GT(auc, 0.8);
  EXPECT_NEAR(auc, 0.9962, 0.02);
}

TEST(DeskNatAdv, SinglePointWganCollapsesOntoThePoint) {
  const std::vector<Vec> one{{0.3, 0.7}};
  WganConfig c;
  c.steps = 300;
  c.seed = 5;
  const WganResult r = wgan_train(one, c);
  Rng rng(9);
  double mx = 0.0, my = 0.0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const Vec x = forward(r.generator, sample_latent(rng, c.z_dim)).output;
    mx += x[0] / n;
    my += x[1] / n;
  }
  EXPECT_NEAR(mx, 0.3, 0.1);
  EXPECT_NEAR(my, 0.7, 0.1);
}

namespace {

struct Moments {
  double mx = 0, my = 0, cxx = 0, cxy = 0, cyy = 0;
};

Moments moments_of(const std::vector<Vec>& v) {
  Moments m;
  const double n = static_cast<double>(v.size());
  for (const auto& p : v) {
    m.mx += p[0] / n;
    m.my += p[1] / n;
  }
  for (const auto& p : v) {
    m.cxx += (p[0] - m.mx) * (p[0] - m.mx) / n;
    m.cxy += (p[0] - m.mx) * (p[1] - m.my) / n;
    m.cyy += (p[1] - m.my) * (p[1] - m.my) / n;
  }
  return m;
}

// One natadv run on the two-Gaussian task, shared by the tests below.
struct GaussRun {
  fs::path out;
  Report report;
  ExperimentConfig cfg;

  GaussRun() {
    const fs::path dir = fs::temp_directory_path() / "advlab_desk_gauss";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path cfg_path = dir / "gauss.json";
    std::ofstream(cfg_path) << R"({"schema_version": 1, "experiment_id": "gauss2", "seed": 3,
      "dataset": {"kind": "gmm", "n": 600, "means": [[0.3, 0.3], [0.7, 0.7]], "sigma": 0.08},
      "model": {"hidden": [16]}, "train": {"epochs": 100}})";
    cfg = load_experiment(cfg_path);
    CommandOptions o;
    o.config = cfg_path;
    o.out = out = dir / "out";
    o.quiet = true;
    if (run_command("natadv", o).exit_code != kExitOk) throw std::runtime_error("natadv desk run failed");
    report = Report::from_json(read_json(out / "report.json"), "report.json");
  }
};

const GaussRun& gauss() {
  static const GaussRun r;
  return r;
}

}  // namespace

// Recorded tolerance: means within 0.02, covariance entries within 0.03.
TEST(DeskNatAdv, GeneratorMatchesDataMoments) {
  const GaussRun& g = gauss();
  const Model gen = load_model(g.out / "generator.json");
  const Moments data = moments_of(features_of(build_dataset(g.cfg.dataset, g.cfg.seed)));
  Rng rng(17);
  std::vector<Vec> xs;
  for (int i = 0; i < 4000; ++i) xs.push_back(forward(gen, sample_latent(rng, gen.input_dim())).output);
  const Moments m = moments_of(xs);
  EXPECT_NEAR(m.mx, data.mx, 0.02);
  EXPECT_NEAR(m.my, data.my, 0.02);
  EXPECT_NEAR(m.cxx, data.cxx, 0.03);
  EXPECT_NEAR(m.cxy, data.cxy, 0.03);
  EXPECT_NEAR(m.cyy, data.cyy, 0.03);
}

TEST(DeskNatAdv, InverterImprovesBothErrors) {
  const auto& m = gauss().report.metrics;
  EXPECT_LT(m.at("inverter.reconstruction_final"), m.at("inverter.reconstruction_initial"));
  EXPECT_LT(m.at("inverter.divergence_final"), m.at("inverter.divergence_initial"));
}

TEST(DeskNatAdv, SearchBaselines) {
  const auto& m = gauss().report.metrics;
  EXPECT_NEAR(m.at("stochastic.success_rate"), 1.0, 0.05);
  EXPECT_NEAR(m.at("stochastic.mean_delta_z"), 0.782, 0.05);
  EXPECT_NEAR(m.at("hybrid.success_rate"), 1.0, 0.05);
  EXPECT_NEAR(m.at("hybrid.mean_delta_z"), 0.770, 0.05);
}

TEST(DeskNatAdv, HybridTraceNeverLoosens) {
  const CsvTable t = read_csv_table(gauss().out / "trace_hybrid.csv");
  ASSERT_GT(t.size(), 0u);
  std::string id;
  double best = 0.0;
  for (std::size_t r = 0; r < t.size(); ++r) {
    const auto& row = t.rows()[r];
    const double v = std::stod(row[4]);
    if (row[0] != id) {
      id = row[0];
    } else if (std::isfinite(best) && std::isfinite(v)) {
      EXPECT_LE(v, best) << "sample " << id;
    }
    best = v;
  }
}
