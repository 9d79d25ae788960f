// advlab: command-line driver for the adversarial-ML desk workbench.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "advlab/commands.hpp"

namespace {

void add_model_flag(CLI::App* c, advlab::CommandOptions& o) {
  c->add_option("--model", o.model_path, "Pre-trained model.json (model.path); trains per config when absent");
}

void add_attack_flags(CLI::App* c, advlab::CommandOptions& o) {
  c->add_option("--attack", o.attack, "Attack name: fgsm | bim | illc | mifgsm | jsma (attacks[].name)");
  c->add_option("--epsilon", o.epsilon,
                "L-inf budget eps, or a sweep lo:hi:step such as 0:0.3:0.05 (attacks[].epsilon)");
  c->add_option("--alpha", o.alpha, "Per-iteration step of BIM / ILLC / MI-FGSM (attacks[].alpha)");
  c->add_option("--iterations", o.iterations, "Iteration count N of the iterative attacks (attacks[].iterations)");
  c->add_option("--mu", o.mu, "MI-FGSM momentum decay factor in [0,1] (attacks[].mu)");
  c->add_option("--target", o.target, "Target class for BIM / MI-FGSM / JSMA (attacks[].target)");
  c->add_option("--theta", o.theta, "JSMA per-feature perturbation theta (attacks[].theta)");
  c->add_option("--upsilon", o.upsilon, "JSMA maximum fraction of modified features (attacks[].upsilon)");
  c->add_option("--max-samples", o.max_samples, "Attack at most this many test samples; 0 = all (attacks[].max_samples)");
}

}  // namespace

int main(int argc, char** argv) {
  advlab::CommandOptions o;
  CLI::App app{"advlab: adversarial-example attacks, defenses and detectors at desk scale"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config, out;
  std::uint64_t seed = 0;
  app.add_option("--config", config, "Experiment config JSON (schema_version 1; unknown keys rejected)");
  app.add_option("--seed", seed, "Override the experiment seed (seed)");
  app.add_option("--out", out, "Output directory; every artifact is written under it (default advlab_out)");
  app.add_flag("--dump-images", o.dump_images, "attack: write PGM triptychs (x, x_adv, |delta| scaled) for image data");
  app.add_flag("--quiet", o.quiet, "Suppress the summary line and warnings");

  auto* train = app.add_subcommand("train", "Train a classifier (plain, adversarial or distilled) and write model.json");
  train->add_option("--mode", o.mode, "plain | adversarial | distilled (train.mode)");
  train->add_option("--epochs", o.epochs, "Training epochs (train.epochs)");
  train->add_option("--lr", o.lr, "SGD learning rate (train.lr)");
  train->add_option("--mix-ratio", o.mix_ratio, "Adversarial share r of the minibatch loss (train.mix_ratio)");
  train->add_option("--temperature", o.temperature, "Distillation softmax temperature T > 1 (train.temperature)");

  auto* attack = app.add_subcommand("attack", "Run attacks over the test split and write report.csv");
  add_model_flag(attack, o);
  add_attack_flags(attack, o);

  auto* defend = app.add_subcommand("defend", "Adversarial accuracy before and after an input squeeze pipeline");
  add_model_flag(defend, o);
  add_attack_flags(defend, o);
  defend->add_option("--pipeline", o.pipeline,
                     "Comma list of identity | bit_depth[:bits] | median | nonlocal | svd[:k] (defense.pipeline)");

  auto* distill = app.add_subcommand("distill", "Defensive distillation against a plainly trained twin");
  distill->add_option("--temperature", o.temperature, "Softmax temperature T used for teacher and student (train.temperature)");
  distill->add_option("--epochs", o.epochs, "Epochs of the plainly trained twin (train.epochs)");
  distill->add_option("--lr", o.lr, "Learning rate of the plainly trained twin (train.lr)");

  auto* detect = app.add_subcommand("detect", "Fit detectors, threshold at a validation FPR, score clean vs adversarial");
  add_model_flag(detect, o);
  detect->add_option("--detector", o.detector, "squeeze | magnet | kde | binary (detectors[].kind)");
  detect->add_option("--fpr", o.fpr, "False-positive rate used to set the threshold (detectors[].fpr)");

  auto* natadv = app.add_subcommand("natadv", "WGAN + inverter latent-space searches for natural adversaries");
  add_model_flag(natadv, o);
  natadv->add_option("--steps", o.steps, "WGAN generator updates (natadv.steps)");
  natadv->add_option("--clip-c", o.clip_c, "Critic weight clip bound c (natadv.clip_c)");
  natadv->add_option("--search-samples", o.search_samples, "Test samples searched (natadv.search_samples)");

  auto* eval = app.add_subcommand("eval", "Join attack, defense and detection tables on sample_id");
  std::string attack_report, defense_report, detect_report;
  eval->add_option("--attack-report", attack_report, "report.csv written by attack");
  eval->add_option("--defense-report", defense_report, "defense.csv written by defend");
  eval->add_option("--detect-report", detect_report, "detections.csv written by detect");

  auto* report = app.add_subcommand("report", "Collect report.json files into summary.csv");
  std::vector<std::string> inputs;
  report->add_option("inputs", inputs, "report.json files or directories holding one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return advlab::kExitUsage;
  }

  if (!config.empty()) o.config = config;
  if (app.count("--seed") > 0) o.seed = seed;
  if (!out.empty()) o.out = out;
  if (!attack_report.empty()) o.attack_report = attack_report;
  if (!defense_report.empty()) o.defense_report = defense_report;
  if (!detect_report.empty()) o.detect_report = detect_report;
  for (const auto& in : inputs) o.inputs.emplace_back(in);

  const std::string name = app.get_subcommands().front()->get_name();
  advlab::CommandOutcome outcome;
  try {
    outcome = advlab::run_command(name, o);
  } catch (const std::exception& e) {
    std::cerr << "advlab " << name << ": internal error: " << e.what() << "\n";
    return advlab::kExitDomain;
  }
  if (!o.quiet) {
    for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << "\n";
  }
  if (outcome.exit_code != advlab::kExitOk) {
    std::cerr << "advlab " << name << ": " << outcome.summary << "\n";
  } else if (!o.quiet) {
    std::cout << outcome.summary << "\n";
  }
  return outcome.exit_code;
}
