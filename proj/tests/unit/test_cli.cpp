#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "advlab/commands.hpp"

using namespace advlab;
namespace fs = std::filesystem;

namespace {

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("advlab_cli_" + name);
  fs::remove_all(p);
  return p;
}

fs::path tiny_config(const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << R"({"schema_version": 1, "experiment_id": "tiny", "seed": 4,
    "dataset": {"kind": "moons", "n": 80},
    "model": {"hidden": [6]},
    "train": {"epochs": 3},
    "attacks": [{"name": "fgsm", "epsilon": 0.1, "max_samples": 10}]})";
  return p;
}

}  // namespace

TEST(Config, UnknownKeyRejected) {
  const json j = json::parse(R"({"schema_version": 1, "dataset": {"kind": "moons", "nosie": 0.1}})");
  try {
    parse_experiment(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("nosie"), std::string::npos);
  }
}

TEST(Config, WrongTypeRejected) {
  EXPECT_THROW(parse_experiment(json::parse(R"({"schema_version": 1, "seed": "seven"})")), ConfigError);
}

TEST(Config, UnknownAttackRejected) {
  EXPECT_THROW(parse_experiment(json::parse(R"({"schema_version": 1, "attacks": [{"name": "cw"}]})")), ConfigError);
}

TEST(Config, EffectiveConfigRoundTrips) {
  const ExperimentConfig c = parse_experiment(json::parse(R"({"schema_version": 1, "seed": 9,
      "defense": {"pipeline": [{"op": "svd", "params": {"k": 2}}, {"op": "median"}]}})"));
  const json once = experiment_to_json(c);
  EXPECT_EQ(experiment_to_json(parse_experiment(once)).dump(), once.dump());
}

TEST(Sweep, InclusiveGrid) {
  const auto v = parse_sweep("0:0.3:0.05");
  ASSERT_EQ(v.size(), 7u);
  EXPECT_EQ(v.front(), 0.0);
  EXPECT_EQ(v.back(), 0.3);
  EXPECT_EQ(v[3], 0.15);
  EXPECT_EQ(parse_sweep("0.2"), (std::vector<double>{0.2}));
  EXPECT_THROW(parse_sweep("0:1"), ConfigError);
  EXPECT_THROW(parse_sweep("0:1:0"), ConfigError);
  EXPECT_THROW(parse_sweep("abc"), ConfigError);
}

TEST(Pipeline, ParsesOpsInOrder) {
  const SqueezePipeline p = parse_pipeline("bit_depth:2,median,svd:3,nonlocal,identity");
  ASSERT_EQ(p.size(), 5u);
  EXPECT_EQ(std::get<BitDepthSqueeze>(p[0]).bits, 2);
  EXPECT_EQ(std::get<SvdSqueeze>(p[2]).k, 3u);
  EXPECT_EQ(squeeze_op_name(p[3]), "nonlocal");
  EXPECT_THROW(parse_pipeline("blur"), ConfigError);
  EXPECT_THROW(parse_pipeline("bit_depth:9"), ConfigError);
}

TEST(DeriveSeed, DistinctTagsDistinctSeeds) {
  EXPECT_NE(derive_seed(7, 1), derive_seed(7, 2));
  EXPECT_EQ(derive_seed(7, 1), derive_seed(7, 1));
}

TEST(Commands, UnknownAttackIsUsageErrorWithNoArtifacts) {
  const fs::path out = fresh("bad_attack");
  CommandOptions o;
  o.config = tiny_config(fresh("cfg1"));
  o.out = out;
  o.attack = "nope";
  const CommandOutcome r = run_command("attack", o);
  EXPECT_EQ(r.exit_code, kExitUsage);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Commands, MissingConfigFileIsUsageError) {
  CommandOptions o;
  o.config = "/nonexistent/advlab.json";
  o.out = fresh("no_cfg");
  EXPECT_EQ(run_command("train", o).exit_code, kExitUsage);
  EXPECT_FALSE(fs::exists(o.out));
}

TEST(Commands, TrainThenAttackWritesExpectedTables) {
  const fs::path cfg = tiny_config(fresh("cfg2"));
  CommandOptions t;
  t.config = cfg;
  t.out = fresh("train");
  t.quiet = true;
  ASSERT_EQ(run_command("train", t).exit_code, kExitOk);
  EXPECT_TRUE(fs::exists(t.out / "model.json"));
  EXPECT_TRUE(fs::exists(t.out / "config.json"));

  CommandOptions a = t;
  a.out = fresh("attack");
  a.model_path = (t.out / "model.json").string();
  ASSERT_EQ(run_command("attack", a).exit_code, kExitOk);
  const CsvTable rep = read_csv_table(a.out / "report.csv");
  EXPECT_EQ(rep.header().front(), "sample_id");
  EXPECT_EQ(rep.size(), 10u);
}

TEST(Commands, DomainErrorWritesNothing) {
  const fs::path cfg = tiny_config(fresh("cfg3"));
  const fs::path bad = fresh("badmodel");
  fs::create_directories(bad);
  std::ofstream(bad / "model.json") << R"({"schema_version": 3})";
  CommandOptions a;
  a.config = cfg;
  a.model_path = (bad / "model.json").string();
  a.out = fresh("attack_bad");
  const CommandOutcome r = run_command("attack", a);
  EXPECT_NE(r.exit_code, kExitOk);
  EXPECT_FALSE(fs::exists(a.out));
}

TEST(Commands, EvalRejectsMismatchedSampleIds) {
  const fs::path dir = fresh("eval_in");
  fs::create_directories(dir);
  std::ofstream(dir / "a.csv") << "sample_id,attack,success\n0,fgsm,1\n1,fgsm,0\n";
  std::ofstream(dir / "d.csv") << "sample_id,detector,verdict\n0,squeeze,1\n2,squeeze,0\n";
  CommandOptions o;
  o.attack_report = dir / "a.csv";
  o.detect_report = dir / "d.csv";
  o.out = fresh("eval_out");
  const CommandOutcome r = run_command("eval", o);
  EXPECT_EQ(r.exit_code, kExitDomain);
  EXPECT_FALSE(fs::exists(o.out));
}

TEST(Commands, UnknownCommandIsUsageError) { EXPECT_EQ(run_command("frobnicate", CommandOptions{}).exit_code, kExitUsage); }

TEST(Commands, DefaultTrainReachesMoonsBaseline) {
  CommandOptions o;
  o.out = fresh("default_train");
  o.quiet = true;
  ASSERT_EQ(run_command("train", o).exit_code, kExitOk);
  EXPECT_TRUE(fs::exists(o.out / "model.json"));
  const Report rep = Report::from_json(read_json(o.out / "report.json"), "report.json");
  EXPECT_GE(rep.metrics.at("train_accuracy"), 0.95);
}

TEST(Commands, CleanFlagRateNearConfiguredFpr) {
  const fs::path dir = fresh("detect_cfg");
  fs::create_directories(dir);
  const fs::path cfg = dir / "digits.json";
  std::ofstream(cfg) << R"({"schema_version": 1, "experiment_id": "flag", "seed": 21,
    "dataset": {"kind": "digits8x8", "n": 1000},
    "model": {"hidden": [32]}, "train": {"epochs": 60, "lr": 0.05},
    "detectors": [{"kind": "squeeze", "fpr": 0.05}, {"kind": "kde", "fpr": 0.05}]})";
  CommandOptions o;
  o.config = cfg;
  o.out = fresh("detect");
  o.quiet = true;
  ASSERT_EQ(run_command("detect", o).exit_code, kExitOk);
  const Report rep = Report::from_json(read_json(o.out / "report.json"), "report.json");
  for (const auto& [k, v] : rep.metrics)
    if (k.ends_with(".clean_flag_rate")) EXPECT_NEAR(v, 0.05, 0.03) << k;
}
