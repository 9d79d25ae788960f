#pragma once

// Experiment drivers behind the advlab CLI. Each command runs to completion in
// memory and only then writes its artifacts under the output directory, so a
// failing command leaves nothing behind.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/defenses.hpp"
#include "advlab/detectors.hpp"
#include "advlab/experiment.hpp"
#include "advlab/natural_adv.hpp"
#include "advlab/nn.hpp"
#include "advlab/persistence.hpp"
#include "advlab/squeeze.hpp"

namespace advlab {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitDomain = 1, kExitUsage = 2 };

// Global flags plus per-command overrides. Override names mirror config keys.
struct CommandOptions {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  fs::path out = "advlab_out";
  bool dump_images = false;
  bool quiet = false;

  std::optional<std::string> model_path;
  std::optional<std::string> mode;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<double> mix_ratio;
  std::optional<double> temperature;

  std::optional<std::string> attack;
  std::optional<std::string> epsilon;  // "0.2" or a sweep "lo:hi:step"
  std::optional<double> alpha;
  std::optional<std::size_t> iterations;
  std::optional<double> mu;
  std::optional<std::size_t> target;
  std::optional<double> theta;
  std::optional<double> upsilon;
  std::optional<std::size_t> max_samples;

  std::optional<std::string> pipeline;  // "bit_depth:4,median"
  std::optional<std::string> detector;
  std::optional<double> fpr;

  std::optional<std::size_t> steps;
  std::optional<double> clip_c;
  std::optional<std::size_t> search_samples;

  std::optional<fs::path> attack_report;
  std::optional<fs::path> defense_report;
  std::optional<fs::path> detect_report;
  std::vector<fs::path> inputs;
};

struct CommandOutcome {
  int exit_code = kExitOk;
  std::vector<std::string> artifacts_written;
  std::string summary;
  std::vector<std::string> warnings;
};

// Files produced by a command, flushed together at the end.
class Artifacts {
 public:
  void text(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }
  void json_doc(std::string name, const json& j) { text(std::move(name), j.dump(2) + "\n"); }
  void model(std::string name, const Model& m) { json_doc(std::move(name), model_to_json(m)); }
  void csv(std::string name, const CsvTable& t) { text(std::move(name), t.str()); }

  std::vector<std::string> flush(const fs::path& dir) const {
    std::vector<std::string> written;
    fs::create_directories(dir);
    for (const auto& [name, content] : files_) {
      const fs::path p = dir / name;
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      write_text(p, content);
      written.push_back(p.string());
    }
    return written;
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

struct ExperimentResults {
  std::map<std::string, Model> models;  // file name -> model
  std::map<std::string, CsvTable> tables;  // file name -> table; "report.csv" is the main table
  Report report;
};

inline void stage_experiment(const ExperimentConfig& config, const ExperimentResults& results, Artifacts& out) {
  out.json_doc("config.json", experiment_to_json(config));
  for (const auto& [name, m] : results.models) out.model(name, m);
  for (const auto& [name, t] : results.tables) out.csv(name, t);
  out.json_doc("report.json", results.report.to_json());
}

// Writes config.json, one JSON document per model, the CSV tables and report.json.
inline std::vector<std::string> save_experiment(const ExperimentConfig& config, const ExperimentResults& results,
                                                const fs::path& dir) {
  Artifacts a;
  stage_experiment(config, results, a);
  return a.flush(dir);
}

// ---------------------------------------------------------------------------
// Helpers

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  Rng r(base ^ (0x9e3779b97f4a7c15ULL * (tag + 1)));
  return r.next_u64();
}

// "v" or "lo:hi:step" (inclusive of hi up to rounding).
inline std::vector<double> parse_sweep(const std::string& spec) {
  auto num = [&](const std::string& s) {
    const auto v = detail::parse_double(s);
    if (!v) throw ConfigError("--epsilon: '" + s + "' is not a number");
    return *v;
  };
  const auto c1 = spec.find(':');
  if (c1 == std::string::npos) return {num(spec)};
  const auto c2 = spec.find(':', c1 + 1);
  if (c2 == std::string::npos) throw ConfigError("--epsilon sweep must be lo:hi:step");
  const double lo = num(spec.substr(0, c1));
  const double hi = num(spec.substr(c1 + 1, c2 - c1 - 1));
  const double step = num(spec.substr(c2 + 1));
  if (!(step > 0.0) || hi < lo) throw ConfigError("--epsilon sweep needs step > 0 and hi >= lo");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
  return out;
}

// "bit_depth:4,median,svd:3,nonlocal,identity"
inline SqueezePipeline parse_pipeline(const std::string& spec) {
  SqueezePipeline p;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto end = std::min(spec.find(',', start), spec.size());
    const std::string tok = spec.substr(start, end - start);
    start = end + 1;
    if (tok.empty()) continue;
    const auto colon = tok.find(':');
    const std::string op = tok.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : tok.substr(colon + 1);
    auto int_arg = [&](long fallback) {
      if (arg.empty()) return fallback;
      const auto v = detail::parse_double(arg);
      if (!v || *v != std::floor(*v)) throw ConfigError("--pipeline: bad argument in '" + tok + "'");
      return static_cast<long>(*v);
    };
    if (op == "identity") {
      p.push_back(IdentitySqueeze{});
    } else if (op == "bit_depth") {
      const long bits = int_arg(4);
      if (bits < 1 || bits > 7) throw ConfigError("--pipeline: bit_depth must be in [1,7]");
      p.push_back(BitDepthSqueeze{static_cast<int>(bits)});
    } else if (op == "median") {
      p.push_back(MedianSqueeze{});
    } else if (op == "nonlocal") {
      p.push_back(NonLocalSqueeze{});
    } else if (op == "svd") {
      const long k = int_arg(3);
      if (k < 1) throw ConfigError("--pipeline: svd rank must be >= 1");
      p.push_back(SvdSqueeze{static_cast<std::size_t>(k)});
    } else {
      throw ConfigError("--pipeline: unknown operation '" + op + "'");
    }
  }
  if (p.empty()) throw ConfigError("--pipeline is empty");
  return p;
}

inline bool needs_image(const SqueezePipeline& p) {
  return std::any_of(p.begin(), p.end(), [](const SqueezeOp& op) {
    return !std::holds_alternative<IdentitySqueeze>(op) && !std::holds_alternative<BitDepthSqueeze>(op);
  });
}

inline std::string bool_cell(bool b) { return b ? "1" : "0"; }

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Metric key for an (attack, epsilon) block, e.g. "fgsm@0.2".
inline std::string block_key(const std::string& attack, double eps) { return attack + "@" + format_real(eps); }

namespace detail {

struct Prepared {
  ExperimentConfig cfg;
  Dataset train;  // classifier training data
  Dataset val;    // held out from the classifier; detector calibration
  Dataset test;
  std::optional<Model> loaded;  // from --model or model.path
};

inline void apply_overrides(ExperimentConfig& c, const CommandOptions& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.model_path) c.model.path = *o.model_path;
  if (o.mode) {
    if (*o.mode != "plain" && *o.mode != "adversarial" && *o.mode != "distilled") {
      throw ConfigError("--mode must be plain|adversarial|distilled");
    }
    c.train.mode = *o.mode;
  }
  if (o.epochs) c.train.config.epochs = *o.epochs;
  if (o.lr) {
    if (!(*o.lr > 0.0)) throw ConfigError("--lr must be > 0");
    c.train.config.lr = *o.lr;
  }
  if (o.mix_ratio) {
    if (!(*o.mix_ratio >= 0.0 && *o.mix_ratio <= 1.0)) throw ConfigError("--mix-ratio must be in [0,1]");
    c.train.mix_ratio = *o.mix_ratio;
  }
  if (o.temperature) {
    if (!(*o.temperature > 1.0)) throw ConfigError("--temperature must be > 1");
    c.train.temperature = *o.temperature;
  }
  if (o.attack) {
    check_attack_name(*o.attack, "--attack");
    AttackSpec a;
    for (const auto& existing : c.attacks)
      if (existing.name == *o.attack) a = existing;
    a.name = *o.attack;
    c.attacks = {a};
  }
  for (auto& a : c.attacks) {
    if (o.alpha) a.config.alpha = *o.alpha;
    if (o.iterations) a.config.iterations = *o.iterations;
    if (o.mu) a.config.momentum_decay = *o.mu;
    if (o.target) a.config.target = *o.target;
    if (o.theta) a.config.theta = *o.theta;
    if (o.upsilon) a.config.upsilon = *o.upsilon;
    if (o.max_samples) a.max_samples = *o.max_samples;
    try {
      a.config.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("attack override: ") + e.what());
    }
  }
  if (o.pipeline) c.defense = parse_pipeline(*o.pipeline);
  if (o.detector) {
    const std::string& k = *o.detector;
    if (k != "squeeze" && k != "magnet" && k != "kde" && k != "binary") {
      throw ConfigError("--detector must be squeeze|magnet|kde|binary");
    }
    DetectorSpec d;
    for (const auto& existing : c.detectors)
      if (existing.kind == k) d = existing;
    d.kind = k;
    c.detectors = {d};
  }
  if (o.fpr) {
    if (!(*o.fpr > 0.0 && *o.fpr < 1.0)) throw ConfigError("--fpr must be in (0,1)");
    for (auto& d : c.detectors) d.fpr = *o.fpr;
  }
  if (o.steps) c.natadv.wgan.steps = *o.steps;
  if (o.clip_c) {
    if (!(*o.clip_c > 0.0)) throw ConfigError("--clip-c must be > 0");
    c.natadv.wgan.clip_c = *o.clip_c;
  }
  if (o.search_samples) c.natadv.search_samples = *o.search_samples;
}

// Everything that can fail with a usage/config error happens here.
inline Prepared prepare(const CommandOptions& o) {
  Prepared p;
  p.cfg = o.config ? load_experiment(*o.config) : ExperimentConfig{};
  apply_overrides(p.cfg, o);
  check_dataset_inputs(p.cfg.dataset);
  Dataset all = build_dataset(p.cfg.dataset, p.cfg.seed);
  if (all.size() < 2) throw ConfigError("dataset needs at least two samples");
  if (all.class_count < 2) throw ConfigError("dataset needs at least two classes");
  auto [train, test] = split(all, p.cfg.dataset.test_fraction, derive_seed(p.cfg.seed, 1));
  if (train.empty() || test.empty()) throw ConfigError("dataset.test_fraction leaves an empty split");
  auto [fit, val] = split(train, p.cfg.dataset.val_fraction, derive_seed(p.cfg.seed, 5));
  if (fit.empty() || val.empty()) throw ConfigError("dataset.val_fraction leaves an empty split");
  p.train = std::move(fit);
  p.val = std::move(val);
  p.test = std::move(test);
  if (!p.cfg.model.path.empty()) {
    if (!fs::exists(p.cfg.model.path)) throw ConfigError("model '" + p.cfg.model.path + "' does not exist");
    Model m = load_model(p.cfg.model.path);
    if (m.input_dim() != p.train.feature_dim || m.output_dim() != p.train.class_count) {
      throw ConfigError("model '" + p.cfg.model.path + "' does not match the dataset dimensions");
    }
    p.loaded = std::move(m);
  }
  return p;
}

struct Trained {
  Model model;
  Vec loss_history;
  std::optional<Model> teacher;
};

inline Trained train_per_config(const ExperimentConfig& c, const Dataset& train) {
  const auto dims = classifier_dims(train.feature_dim, c.model.hidden, train.class_count);
  TrainConfig tc = c.train.config;
  tc.seed = derive_seed(c.seed, 3);
  const std::uint64_t init_seed = derive_seed(c.seed, 2);
  Trained out;
  if (c.train.mode == "distilled") {
    DistillConfig dc;
    dc.temperature = c.train.temperature;
    dc.hidden = c.model.hidden;
    dc.activation = c.model.activation;
    dc.teacher = tc;
    dc.teacher.epochs = c.train.teacher_epochs;
    dc.teacher.lr = c.train.distill_lr;
    dc.student = dc.teacher;
    dc.student.epochs = c.train.student_epochs;
    dc.student.seed = derive_seed(c.seed, 4);
    DistillResult r = distill(train, dc, init_seed);
    out.model = std::move(r.student);
    out.loss_history = std::move(r.student_loss);
    out.teacher = std::move(r.teacher);
    return out;
  }
  Model init = make_model(dims, c.model.activation, init_seed);
  if (c.train.mode == "adversarial") {
    AdversarialTrainConfig ac;
    ac.attack = c.train.inner_attack == "bim" ? InnerAttack::bim : InnerAttack::fgsm;
    ac.attack_config.epsilon = c.train.adv_epsilon;
    ac.attack_config.alpha = c.train.adv_alpha;
    ac.attack_config.iterations = c.train.adv_iterations;
    ac.mix_ratio = c.train.mix_ratio;
    ac.train = tc;
    TrainResult r = adversarial_train(std::move(init), train.samples, ac);
    out.model = std::move(r.model);
    out.loss_history = std::move(r.loss_history);
    return out;
  }
  TrainResult r = train_sgd(std::move(init), train.samples, tc);
  out.model = std::move(r.model);
  out.loss_history = std::move(r.loss_history);
  return out;
}

// Uses the loaded model when present, otherwise trains one and stages it as model.json.
inline Model obtain_model(const Prepared& p, ExperimentResults& res) {
  if (p.loaded) return *p.loaded;
  Trained t = train_per_config(p.cfg, p.train);
  res.models["model.json"] = t.model;
  return t.model;
}

inline AttackResult run_attack(const Model& m, const Sample& s, const std::string& name, const AttackConfig& cfg) {
  if (name == "fgsm") return fgsm(m, s, cfg.epsilon);
  if (name == "bim") return bim(m, s, cfg);
  if (name == "illc") return illc(m, s, cfg);
  if (name == "mifgsm") return mifgsm(m, s, cfg);
  const std::size_t target = cfg.target ? *cfg.target : (hard_label(s.y) + 1) % m.output_dim();
  return jsma(m, s, target, cfg);
}

inline std::size_t sample_limit(const AttackSpec& a, const Dataset& d) {
  return a.max_samples == 0 ? d.size() : std::min(a.max_samples, d.size());
}

inline std::vector<double> epsilons_for(const AttackSpec& a, const CommandOptions& o) {
  return o.epsilon ? parse_sweep(*o.epsilon) : std::vector<double>{a.config.epsilon};
}

inline Matrix triptych(std::span<const double> x, std::span<const double> x_adv, ImageShape shape) {
  Matrix t(shape.height, 3 * shape.width);
  double peak = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) peak = std::max(peak, std::abs(x_adv[i] - x[i]));
  for (std::size_t r = 0; r < shape.height; ++r) {
    for (std::size_t c = 0; c < shape.width; ++c) {
      const std::size_t i = r * shape.width + c;
      t(r, c) = x[i];
      t(r, shape.width + c) = x_adv[i];
      t(r, 2 * shape.width + c) = peak > 0.0 ? std::abs(x_adv[i] - x[i]) / peak : 0.0;
    }
  }
  return t;
}

template <typename Body>
CommandOutcome guarded(const CommandOptions& o, Body&& body) {
  CommandOutcome outcome;
  Prepared p;
  try {
    p = prepare(o);
  } catch (const Error& e) {
    outcome.exit_code = kExitUsage;
    outcome.summary = std::string(e.kind()) + " error: " + e.what();
    return outcome;
  }
  Artifacts files;
  try {
    outcome.summary = body(p, files, outcome);
  } catch (const ConfigError& e) {
    outcome.exit_code = kExitUsage;
    outcome.summary = std::string("config error: ") + e.what();
    return outcome;
  } catch (const Error& e) {
    outcome.exit_code = kExitDomain;
    outcome.summary = std::string(e.kind()) + " error: " + e.what();
    return outcome;
  }
  try {
    outcome.artifacts_written = files.flush(o.out);
  } catch (const std::exception& e) {
    outcome.exit_code = kExitDomain;
    outcome.summary = std::string("write failed: ") + e.what();
  }
  return outcome;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

// Trains a model per train.mode and writes model.json plus the training curve.
inline CommandOutcome cmd_train(const CommandOptions& o) {
  return detail::guarded(o, [&](detail::Prepared& p, Artifacts& files, CommandOutcome&) {
    detail::Trained t = detail::train_per_config(p.cfg, p.train);
    ExperimentResults res;
    res.models["model.json"] = t.model;
    if (t.teacher) res.models["teacher.json"] = *t.teacher;
    CsvTable curve({"epoch", "loss"});
    for (std::size_t e = 0; e < t.loss_history.size(); ++e) curve.add({std::to_string(e + 1), format_real(t.loss_history[e])});
    res.tables["train_curve.csv"] = curve;
    const double train_acc = accuracy(t.model, p.train.samples);
    const double test_acc = accuracy(t.model, p.test.samples);
    res.report.experiment_id = p.cfg.experiment_id;
    res.report.metrics["train_accuracy"] = train_acc;
    res.report.metrics["test_accuracy"] = test_acc;
    res.report.metrics["final_loss"] = t.loss_history.empty() ? 0.0 : t.loss_history.back();
    res.report.tables["train_curve"] = "train_curve.csv";
    stage_experiment(p.cfg, res, files);
    return "train (" + p.cfg.train.mode + "): train accuracy " + format_real(train_acc) + ", test accuracy " +
           format_real(test_acc);
  });
}

// Per-sample attack results for every configured attack and epsilon.
inline CommandOutcome cmd_attack(const CommandOptions& o) {
  return detail::guarded(o, [&](detail::Prepared& p, Artifacts& files, CommandOutcome& outcome) {
    std::vector<std::vector<double>> sweeps;
    for (const auto& a : p.cfg.attacks) sweeps.push_back(detail::epsilons_for(a, o));
    ExperimentResults res;
    const Model model = detail::obtain_model(p, res);
    CsvTable table({"sample_id", "attack", "epsilon", "alpha", "iterations", "mu", "target", "success", "linf", "l1",
                    "l2", "modified_fraction", "queries"});
    res.report.experiment_id = p.cfg.experiment_id;
    res.report.metrics["clean_accuracy"] = accuracy(model, p.test.samples);
    std::string digest;
    for (std::size_t ai = 0; ai < p.cfg.attacks.size(); ++ai) {
      const AttackSpec& spec = p.cfg.attacks[ai];
      for (double eps : sweeps[ai]) {
        AttackConfig cfg = spec.config;
        cfg.epsilon = eps;
        if (spec.name != "fgsm" && spec.name != "jsma" && cfg.alpha_exceeds_epsilon()) {
          outcome.warnings.push_back(block_key(spec.name, eps) + ": alpha exceeds epsilon");
        }
        const std::size_t n = detail::sample_limit(spec, p.test);
        std::size_t successes = 0;
        std::vector<double> linf, l2;
        for (std::size_t i = 0; i < n; ++i) {
          const Sample& s = p.test.samples[i];
          const AttackResult r = detail::run_attack(model, s, spec.name, cfg);
          successes += r.success ? 1 : 0;
          linf.push_back(r.linf_norm);
          l2.push_back(r.l2_norm);
          const bool iterative = spec.name == "bim" || spec.name == "illc" || spec.name == "mifgsm";
          std::string iters = spec.name == "fgsm" ? "1" : std::to_string(spec.name == "jsma" ? r.iterations_used : cfg.iterations);
          table.add({std::to_string(i), spec.name, format_real(eps), iterative ? format_real(cfg.alpha) : "", iters,
                     spec.name == "mifgsm" ? format_real(cfg.momentum_decay) : "",
                     r.target ? std::to_string(*r.target) : "", bool_cell(r.success), format_real(r.linf_norm),
                     format_real(r.l1_norm), format_real(r.l2_norm), format_real(r.modified_fraction),
                     std::to_string(r.queries)});
          if (o.dump_images && p.test.image) {
            files.text("images/" + spec.name + "_eps" + format_real(eps) + "_" + std::to_string(i) + ".pgm",
                       pgm_bytes(detail::triptych(s.x, r.x_adv, *p.test.image)));
          }
        }
        const std::string key = block_key(spec.name, eps);
        const double rate = n == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(n);
        res.report.metrics[key + ".success_rate"] = rate;
        res.report.metrics[key + ".mean_linf"] = mean_of(linf);
        res.report.metrics[key + ".mean_l2"] = mean_of(l2);
        if (!digest.empty()) digest += ", ";
        digest += key + " success " + format_real(rate);
      }
    }
    res.tables["report.csv"] = table;
    res.report.tables["attacks"] = "report.csv";
    stage_experiment(p.cfg, res, files);
    return "attack: " + digest;
  });
}

// Adversarial accuracy before and after the configured squeeze pipeline.
inline CommandOutcome cmd_defend(const CommandOptions& o) {
  return detail::guarded(o, [&](detail::Prepared& p, Artifacts& files, CommandOutcome&) {
    if (needs_image(p.cfg.defense) && !p.test.image) throw ConfigError("defense pipeline needs an image dataset");
    std::vector<std::vector<double>> sweeps;
    for (const auto& a : p.cfg.attacks) sweeps.push_back(detail::epsilons_for(a, o));
    ExperimentResults res;
    const Model model = detail::obtain_model(p, res);
    const auto shape = p.test.image;
    CsvTable table({"sample_id", "attack", "epsilon", "label", "clean_pred", "adv_pred", "defended_clean_pred",
                    "defended_adv_pred"});
    res.report.experiment_id = p.cfg.experiment_id;
    std::size_t clean_ok = 0, defended_clean_ok = 0;
    std::vector<std::size_t> defended_clean(p.test.size());
    for (std::size_t i = 0; i < p.test.size(); ++i) {
      const Sample& s = p.test.samples[i];
      clean_ok += predict(model, s.x) == hard_label(s.y);
      defended_clean[i] = predict(model, apply_pipeline(p.cfg.defense, s.x, shape));
      defended_clean_ok += defended_clean[i] == hard_label(s.y);
    }
    const double n_all = static_cast<double>(p.test.size());
    res.report.metrics["clean_accuracy"] = static_cast<double>(clean_ok) / n_all;
    res.report.metrics["defended_clean_accuracy"] = static_cast<double>(defended_clean_ok) / n_all;
    std::string digest;
    for (std::size_t ai = 0; ai < p.cfg.attacks.size(); ++ai) {
      const AttackSpec& spec = p.cfg.attacks[ai];
      for (double eps : sweeps[ai]) {
        AttackConfig cfg = spec.config;
        cfg.epsilon = eps;
        const std::size_t n = detail::sample_limit(spec, p.test);
        std::size_t pre = 0, post = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const Sample& s = p.test.samples[i];
          const std::size_t y = hard_label(s.y);
          const AttackResult r = detail::run_attack(model, s, spec.name, cfg);
          const std::size_t defended_adv = predict(model, apply_pipeline(p.cfg.defense, r.x_adv, shape));
          pre += r.predicted_after == y;
          post += defended_adv == y;
          table.add({std::to_string(i), spec.name, format_real(eps), std::to_string(y),
                     std::to_string(r.predicted_before), std::to_string(r.predicted_after),
                     std::to_string(defended_clean[i]), std::to_string(defended_adv)});
        }
        const std::string key = block_key(spec.name, eps);
        const double dn = n == 0 ? 1.0 : static_cast<double>(n);
        res.report.metrics[key + ".adv_accuracy_pre"] = static_cast<double>(pre) / dn;
        res.report.metrics[key + ".adv_accuracy_post"] = static_cast<double>(post) / dn;
        if (!digest.empty()) digest += ", ";
        digest += key + " adversarial accuracy " + format_real(static_cast<double>(pre) / dn) + " -> " +
                  format_real(static_cast<double>(post) / dn);
      }
    }
    res.tables["defense.csv"] = table;
    res.report.tables["defense"] = "defense.csv";
    stage_experiment(p.cfg, res, files);
    return "defend: " + digest;
  });
}

// Fits each configured detector, thresholds it on a clean validation split at
// the configured false-positive rate, and scores clean and adversarial test data.
inline CommandOutcome cmd_detect(const CommandOptions& o) {
  return detail::guarded(o, [&](detail::Prepared& p, Artifacts& files, CommandOutcome&) {
    for (const auto& d : p.cfg.detectors) {
      if (d.kind == "squeeze") {
        for (const auto& pipe : d.squeezers)
          if (needs_image(pipe) && !p.test.image) throw ConfigError("squeezer needs an image dataset");
      }
    }
    ExperimentResults res;
    const Model model = detail::obtain_model(p, res);
    const auto shape = p.test.image;
    res.report.experiment_id = p.cfg.experiment_id;
    CsvTable table({"sample_id", "detector", "score", "threshold", "verdict", "adversarial"});
    std::map<std::string, int> seen;
    std::string digest;
    for (std::size_t k = 0; k < p.cfg.detectors.size(); ++k) {
      const DetectorSpec& d = p.cfg.detectors[k];
      const std::string name = seen[d.kind]++ == 0 ? d.kind : d.kind + "_" + std::to_string(k);
      const Dataset& fit = p.train;
      const Dataset& val = p.val;
      AttackConfig acfg;
      for (const auto& a : p.cfg.attacks)
        if (a.name == d.attack) acfg = a.config;
      acfg.epsilon = d.epsilon;
      auto adversarial = [&](const Sample& s) { return detail::run_attack(model, s, d.attack, acfg).x_adv; };

      std::function<double(std::span<const double>)> score;
      Autoencoder ae;
      KdeBanks banks;
      BinaryDetector bin;
      double recon_scale = 1.0, div_scale = 1.0, bandwidth = d.bandwidth;
      if (d.kind == "squeeze") {
        score = [&](std::span<const double> x) { return squeeze_score(model, x, d.squeezers, shape); };
      } else if (d.kind == "magnet") {
        TrainConfig tc = d.train;
        tc.seed = derive_seed(p.cfg.seed, 30 + k);
        ae = train_autoencoder(features_of(fit), d.hidden, tc);
        std::vector<double> rv, dv;
        for (const auto& s : val.samples) {
          rv.push_back(reconstruction_error(ae, s.x));
          dv.push_back(magnet_divergence(ae, model, s.x, d.t_div));
        }
        recon_scale = std::max(median_of(rv), 1e-12);
        div_scale = std::max(median_of(dv), 1e-12);
        score = [&](std::span<const double> x) {
          return magnet_detect(ae, model, x, recon_scale, div_scale, d.t_div).score;
        };
      } else if (d.kind == "kde") {
        banks = kde_fit(model, fit);
        if (!(bandwidth > 0.0)) bandwidth = kde_default_bandwidth(banks);
        score = [&](std::span<const double> x) { return kde_detect(model, banks, x, bandwidth, 0.0).score; };
      } else {
        std::vector<Vec> clean_fit, adv_fit;
        for (const auto& s : fit.samples) {
          clean_fit.push_back(s.x);
          adv_fit.push_back(adversarial(s));
        }
        TrainConfig tc = d.train;
        tc.seed = derive_seed(p.cfg.seed, 40 + k);
        bin = binary_detector(model, clean_fit, adv_fit, d.layer, d.hidden, tc);
        score = [&](std::span<const double> x) { return bin.score(model, x); };
      }

      std::vector<double> val_scores;
      for (const auto& s : val.samples) val_scores.push_back(score(s.x));
      const double thr = threshold_at_fpr(val_scores, d.fpr);
      std::vector<ScoredLabel> scored;
      std::size_t clean_flags = 0, adv_flags = 0, reformed_ok = 0, adv_ok = 0;
      std::vector<double> recon_clean, recon_adv;
      for (std::size_t i = 0; i < p.test.size(); ++i) {
        const Sample& s = p.test.samples[i];
        const Vec xa = adversarial(s);
        const double sc = score(s.x), sa = score(xa);
        clean_flags += sc > thr;
        adv_flags += sa > thr;
        scored.push_back({sc, false});
        scored.push_back({sa, true});
        table.add({std::to_string(i), name, format_real(sc), format_real(thr), bool_cell(sc > thr), "0"});
        table.add({std::to_string(i), name, format_real(sa), format_real(thr), bool_cell(sa > thr), "1"});
        if (d.kind == "magnet") {
          recon_clean.push_back(reconstruction_error(ae, s.x));
          recon_adv.push_back(reconstruction_error(ae, xa));
          const Reformed rf = magnet_reform(std::span<const Autoencoder>(&ae, 1), xa, derive_seed(p.cfg.seed, 50 + i));
          reformed_ok += predict(model, rf.x) == hard_label(s.y);
          adv_ok += predict(model, xa) == hard_label(s.y);
        }
      }
      const double n = static_cast<double>(p.test.size());
      const double auc = roc_auc(scored);
      res.report.metrics[name + ".auc"] = auc;
      res.report.metrics[name + ".threshold"] = thr;
      res.report.metrics[name + ".clean_flag_rate"] = static_cast<double>(clean_flags) / n;
      res.report.metrics[name + ".adv_flag_rate"] = static_cast<double>(adv_flags) / n;
      if (d.kind == "magnet") {
        res.report.metrics[name + ".median_recon_clean"] = median_of(recon_clean);
        res.report.metrics[name + ".median_recon_adv"] = median_of(recon_adv);
        res.report.metrics[name + ".adv_accuracy"] = static_cast<double>(adv_ok) / n;
        res.report.metrics[name + ".reformed_adv_accuracy"] = static_cast<double>(reformed_ok) / n;
      }
      if (d.kind == "kde") res.report.metrics[name + ".bandwidth"] = bandwidth;
      CsvTable roc({"fpr", "tpr"});
      for (const auto& pt : roc_curve(scored)) roc.add({format_real(pt.fpr), format_real(pt.tpr)});
      res.tables["roc_" + name + ".csv"] = roc;
      res.report.tables["roc_" + name] = "roc_" + name + ".csv";
      if (!digest.empty()) digest += ", ";
      digest += name + " AUC " + format_real(auc) + " clean flag rate " +
                format_real(static_cast<double>(clean_flags) / n);
    }
    res.tables["detections.csv"] = table;
    res.report.tables["detections"] = "detections.csv";
    stage_experiment(p.cfg, res, files);
    return "detect: " + digest;
  });
}

// Teacher/student distillation next to a plainly trained twin with the same
// initial weights; compares input-gradient magnitudes on the test split.
inline CommandOutcome cmd_distill(const CommandOptions& o) {
  return detail::guarded(o, [&](detail::Prepared& p, Artifacts& files, CommandOutcome&) {
    ExperimentConfig dcfg = p.cfg;
    dcfg.train.mode = "distilled";
    detail::Trained distilled = detail::train_per_config(dcfg, p.train);
    ExperimentConfig pcfg = p.cfg;
    pcfg.train.mode = "plain";
    detail::Trained plain = detail::train_per_config(pcfg, p.train);
    CsvTable table({"sample_id", "label", "student_pred", "plain_pred", "student_grad_l1", "plain_grad_l1"});
    std::vector<double> gs, gp;
    for (std::size_t i = 0; i < p.test.size(); ++i) {
      const Sample& s = p.test.samples[i];
      const double a = norm_l1(input_gradient(distilled.model, s.x, s.y));
      const double b = norm_l1(input_gradient(plain.model, s.x, s.y));
      gs.push_back(a);
      gp.push_back(b);
      table.add({std::to_string(i), std::to_string(hard_label(s.y)), std::to_string(predict(distilled.model, s.x)),
                 std::to_string(predict(plain.model, s.x)), format_real(a), format_real(b)});
    }
    ExperimentResults res;
    res.models["teacher.json"] = *distilled.teacher;
    res.models["student.json"] = distilled.model;
    res.models["plain.json"] = plain.model;
    res.tables["distill.csv"] = table;
    res.report.experiment_id = p.cfg.experiment_id;
    res.report.metrics["temperature"] = p.cfg.train.temperature;
    res.report.metrics["teacher_accuracy"] = accuracy(*distilled.teacher, p.test.samples);
    res.report.metrics["student_accuracy"] = accuracy(distilled.model, p.test.samples);
    res.report.metrics["plain_accuracy"] = accuracy(plain.model, p.test.samples);
    res.report.metrics["student_median_grad_l1"] = median_of(gs);
    res.report.metrics["plain_median_grad_l1"] = median_of(gp);
    res.report.tables["distill"] = "distill.csv";
    stage_experiment(p.cfg, res, files);
    return "distill: median |grad|_1 student " + format_real(median_of(gs)) + " vs plain " + format_real(median_of(gp));
  });
}

// WGAN + inverter on the training features, then both latent searches against
// the classifier on the first test samples.
inline CommandOutcome cmd_natadv(const CommandOptions& o) {
  return detail::guarded(o, [&](detail::Prepared& p, Artifacts& files, CommandOutcome&) {
    ExperimentResults res;
    const Model model = detail::obtain_model(p, res);
    const NatAdvSpec& spec = p.cfg.natadv;
    const std::vector<Vec> xs = features_of(p.train);
    WganConfig wc = spec.wgan;
    wc.seed = derive_seed(p.cfg.seed, 20);
    double max_abs = 0.0;
    std::size_t violations = 0;
    const WganResult gan = wgan_train(xs, wc, [&](std::size_t, const Model& critic) {
      const double m = max_abs_parameter(critic);
      max_abs = std::max(max_abs, m);
      violations += m > wc.clip_c;
    });
    InverterConfig ic = spec.inverter;
    ic.seed = derive_seed(p.cfg.seed, 21);
    const InverterResult inv = inverter_train(gan.generator, xs, ic);
    const LabelFn classify = model_classifier(model);

    CsvTable results({"sample_id", "search", "success", "delta_z", "queries"});
    const std::vector<std::string> trace_header = {"sample_id", "iteration", "radius", "candidate_count",
                                                   "best_delta_z", "success"};
    CsvTable trace_s(trace_header), trace_h(trace_header);
    auto add_trace = [](CsvTable& t, std::size_t id, const LatentSearchResult& r) {
      for (const auto& row : r.trace) {
        t.add({std::to_string(id), std::to_string(row.iteration), format_real(row.radius),
               std::to_string(row.candidate_count), format_real(row.best_delta_z), bool_cell(row.success)});
      }
    };
    const std::size_t n = std::min(spec.search_samples, p.test.size());
    std::vector<double> qs, qh, qs_matched, qh_matched, dz_s, dz_h;
    std::size_t ok_s = 0, ok_h = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec& x = p.test.samples[i].x;
      StochasticSearchConfig sc = spec.stochastic;
      sc.seed = derive_seed(p.cfg.seed, 1000 + i);
      HybridSearchConfig hc = spec.hybrid;
      hc.seed = derive_seed(p.cfg.seed, 2000 + i);
      const LatentSearchResult a = iterative_stochastic_search(gan.generator, inv.inverter, classify, x, sc);
      const LatentSearchResult b = hybrid_shrinking_search(gan.generator, inv.inverter, classify, x, hc);
      results.add({std::to_string(i), "stochastic", bool_cell(a.success), format_real(a.delta_z_norm),
                   std::to_string(a.classifier_queries)});
      results.add({std::to_string(i), "hybrid", bool_cell(b.success), format_real(b.delta_z_norm),
                   std::to_string(b.classifier_queries)});
      add_trace(trace_s, i, a);
      add_trace(trace_h, i, b);
      qs.push_back(static_cast<double>(a.classifier_queries));
      qh.push_back(static_cast<double>(b.classifier_queries));
      ok_s += a.success;
      ok_h += b.success;
      if (a.success) dz_s.push_back(a.delta_z_norm);
      if (b.success) dz_h.push_back(b.delta_z_norm);
      if (a.success && b.success) {
        qs_matched.push_back(static_cast<double>(a.classifier_queries));
        qh_matched.push_back(static_cast<double>(b.classifier_queries));
      }
    }
    Rng diag_rng(derive_seed(p.cfg.seed, 22));
    std::vector<Vec> zs;
    for (std::size_t i = 0; i < std::min<std::size_t>(xs.size(), 256); ++i) zs.push_back(sample_latent(diag_rng, wc.z_dim));
    const GanLossReport diag =
        gan_loss_eval(gan.generator, gan.critic, std::span<const Vec>(xs.data(), zs.size()), zs);

    res.models["generator.json"] = gan.generator;
    res.models["critic.json"] = gan.critic;
    res.models["inverter.json"] = inv.inverter;
    res.tables["natadv.csv"] = results;
    res.tables["trace_stochastic.csv"] = trace_s;
    res.tables["trace_hybrid.csv"] = trace_h;
    CsvTable curve({"step", "critic_objective"});
    for (std::size_t k = 0; k < gan.critic_objective.size(); ++k)
      curve.add({std::to_string(k + 1), format_real(gan.critic_objective[k])});
    res.tables["critic_curve.csv"] = curve;
    auto& m = res.report.metrics;
    res.report.experiment_id = p.cfg.experiment_id;
    m["clip_c"] = wc.clip_c;
    m["critic_max_abs_weight"] = max_abs;
    m["clip_violations"] = static_cast<double>(violations);
    m["inverter.reconstruction_initial"] = inv.initial.reconstruction;
    m["inverter.reconstruction_final"] = inv.final.reconstruction;
    m["inverter.divergence_initial"] = inv.initial.divergence;
    m["inverter.divergence_final"] = inv.final.divergence;
    m["gan.value"] = diag.gan_value;
    m["gan.critic_objective"] = diag.critic_objective;
    m["gan.generator_objective"] = diag.generator_objective;
    const double dn = n == 0 ? 1.0 : static_cast<double>(n);
    m["stochastic.success_rate"] = static_cast<double>(ok_s) / dn;
    m["hybrid.success_rate"] = static_cast<double>(ok_h) / dn;
    m["stochastic.mean_queries"] = mean_of(qs);
    m["hybrid.mean_queries"] = mean_of(qh);
    m["stochastic.mean_delta_z"] = mean_of(dz_s);
    m["hybrid.mean_delta_z"] = mean_of(dz_h);
    m["matched.count"] = static_cast<double>(qs_matched.size());
    m["matched.stochastic_mean_queries"] = mean_of(qs_matched);
    m["matched.hybrid_mean_queries"] = mean_of(qh_matched);
    res.report.tables["natadv"] = "natadv.csv";
    res.report.tables["trace_stochastic"] = "trace_stochastic.csv";
    res.report.tables["trace_hybrid"] = "trace_hybrid.csv";
    res.report.tables["critic_curve"] = "critic_curve.csv";
    stage_experiment(p.cfg, res, files);
    return "natadv: mean queries stochastic " + format_real(mean_of(qs)) + " vs hybrid " + format_real(mean_of(qh)) +
           ", critic max |w| " + format_real(max_abs) + " (clip " + format_real(wc.clip_c) + ")";
  });
}

// ---------------------------------------------------------------------------
// eval / report work on files written by the other commands.

namespace detail {

inline std::size_t column(const CsvTable& t, const std::string& name, const fs::path& where) {
  const auto& h = t.header();
  const auto it = std::find(h.begin(), h.end(), name);
  if (it == h.end()) throw ConfigError(where.string() + " has no '" + name + "' column");
  return static_cast<std::size_t>(it - h.begin());
}

inline std::vector<std::string> ordered_ids(const CsvTable& t, std::size_t col) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& r : t.rows())
    if (seen.insert(r[col]).second) ids.push_back(r[col]);
  return ids;
}

inline double cell_number(const std::string& s, const fs::path& where) {
  const auto v = parse_double(s);
  if (!v) throw ParseError(where.string() + ": '" + s + "' is not a number");
  return *v;
}

}  // namespace detail

// Joins attack, defense and detection tables on sample_id into one metrics table.
inline CommandOutcome cmd_eval(const CommandOptions& o) {
  CommandOutcome outcome;
  struct Stage {
    std::string name;
    fs::path path;
    CsvTable table;
  };
  std::vector<Stage> stages;
  try {
    if (o.attack_report) stages.push_back({"attack", *o.attack_report, {}});
    if (o.defense_report) stages.push_back({"defense", *o.defense_report, {}});
    if (o.detect_report) stages.push_back({"detect", *o.detect_report, {}});
    if (stages.empty()) throw ConfigError("eval needs --attack-report, --defense-report or --detect-report");
    for (auto& s : stages) {
      if (!fs::exists(s.path)) throw ConfigError(s.name + " report '" + s.path.string() + "' does not exist");
      s.table = read_csv_table(s.path);
      detail::column(s.table, "sample_id", s.path);
    }
  } catch (const Error& e) {
    outcome.exit_code = kExitUsage;
    outcome.summary = std::string(e.kind()) + " error: " + e.what();
    return outcome;
  }

  // Every stage must cover the same samples.
  const auto ref = detail::ordered_ids(stages[0].table, detail::column(stages[0].table, "sample_id", stages[0].path));
  const std::set<std::string> ref_set(ref.begin(), ref.end());
  for (std::size_t k = 1; k < stages.size(); ++k) {
    const auto ids = detail::ordered_ids(stages[k].table, detail::column(stages[k].table, "sample_id", stages[k].path));
    const std::set<std::string> id_set(ids.begin(), ids.end());
    for (const auto& id : ids) {
      if (!ref_set.count(id)) {
        outcome.exit_code = kExitDomain;
        outcome.summary = "sample id mismatch: id " + id + " in " + stages[k].name + " is missing from " + stages[0].name;
        return outcome;
      }
    }
    for (const auto& id : ref) {
      if (!id_set.count(id)) {
        outcome.exit_code = kExitDomain;
        outcome.summary = "sample id mismatch: id " + id + " in " + stages[0].name + " is missing from " + stages[k].name;
        return outcome;
      }
    }
  }

  Report report;
  report.experiment_id = "eval";
  try {
    for (const auto& s : stages) {
      const CsvTable& t = s.table;
      if (s.name == "attack") {
        const auto ca = detail::column(t, "attack", s.path), ce = detail::column(t, "epsilon", s.path),
                   cs = detail::column(t, "success", s.path);
        std::map<std::string, std::pair<double, double>> blocks;
        for (const auto& r : t.rows()) {
          auto& b = blocks[r[ca] + "@" + r[ce]];
          b.first += r[cs] == "1";
          b.second += 1;
        }
        for (const auto& [k, b] : blocks) report.metrics[k + ".success_rate"] = b.first / b.second;
      } else if (s.name == "defense") {
        const auto ca = detail::column(t, "attack", s.path), ce = detail::column(t, "epsilon", s.path),
                   cl = detail::column(t, "label", s.path), cc = detail::column(t, "clean_pred", s.path),
                   cp = detail::column(t, "adv_pred", s.path), cq = detail::column(t, "defended_adv_pred", s.path),
                   cid = detail::column(t, "sample_id", s.path);
        std::map<std::string, std::array<double, 3>> blocks;
        std::set<std::string> counted;
        double clean_ok = 0, clean_n = 0;
        for (const auto& r : t.rows()) {
          if (counted.insert(r[cid]).second) {
            clean_ok += r[cc] == r[cl];
            clean_n += 1;
          }
          auto& b = blocks[r[ca] + "@" + r[ce]];
          b[0] += r[cp] == r[cl];
          b[1] += r[cq] == r[cl];
          b[2] += 1;
        }
        report.metrics["clean_accuracy"] = clean_n > 0 ? clean_ok / clean_n : 0.0;
        for (const auto& [k, b] : blocks) {
          report.metrics[k + ".adv_accuracy_pre"] = b[0] / b[2];
          report.metrics[k + ".adv_accuracy_post"] = b[1] / b[2];
        }
      } else {
        const auto cd = detail::column(t, "detector", s.path), cs = detail::column(t, "score", s.path),
                   ct = detail::column(t, "threshold", s.path), cv = detail::column(t, "verdict", s.path),
                   cadv = detail::column(t, "adversarial", s.path);
        std::map<std::string, std::vector<ScoredLabel>> scores;
        std::map<std::string, double> thresholds;
        std::map<std::string, std::pair<double, double>> flags;
        for (const auto& r : t.rows()) {
          const bool adv = r[cadv] == "1";
          scores[r[cd]].push_back({detail::cell_number(r[cs], s.path), adv});
          thresholds[r[cd]] = detail::cell_number(r[ct], s.path);
          if (!adv) {
            flags[r[cd]].first += r[cv] == "1";
            flags[r[cd]].second += 1;
          }
        }
        for (const auto& [k, v] : scores) {
          report.metrics[k + ".auc"] = roc_auc(v);
          report.metrics[k + ".threshold"] = thresholds[k];
          const auto& f = flags[k];
          report.metrics[k + ".clean_flag_rate"] = f.second > 0 ? f.first / f.second : 0.0;
        }
      }
      report.tables[s.name] = fs::absolute(s.path).lexically_normal().string();
    }
  } catch (const Error& e) {
    outcome.exit_code = kExitDomain;
    outcome.summary = std::string(e.kind()) + " error: " + e.what();
    return outcome;
  }
  CsvTable metrics({"metric", "value"});
  for (const auto& [k, v] : report.metrics) metrics.add({k, format_real(v)});
  report.tables["eval"] = "eval.csv";
  Artifacts files;
  files.csv("eval.csv", metrics);
  files.json_doc("report.json", report.to_json());
  try {
    outcome.artifacts_written = files.flush(o.out);
  } catch (const std::exception& e) {
    outcome.exit_code = kExitDomain;
    outcome.summary = std::string("write failed: ") + e.what();
    return outcome;
  }
  outcome.summary = "eval: " + std::to_string(report.metrics.size()) + " metrics over " + std::to_string(ref.size()) +
                    " samples";
  return outcome;
}

// Collects report.json files (or directories holding one) into summary.csv.
inline CommandOutcome cmd_report(const CommandOptions& o) {
  CommandOutcome outcome;
  CsvTable summary({"experiment_id", "source", "metric", "value"});
  try {
    if (o.inputs.empty()) throw ConfigError("report needs at least one report.json or directory");
    for (const auto& in : o.inputs) {
      const fs::path file = fs::is_directory(in) ? in / "report.json" : in;
      if (!fs::exists(file)) throw ConfigError("'" + file.string() + "' does not exist");
      const Report r = Report::from_json(read_json(file), file.string());
      for (const auto& [k, v] : r.metrics) summary.add({r.experiment_id, file.string(), k, format_real(v)});
    }
  } catch (const Error& e) {
    outcome.exit_code = kExitUsage;
    outcome.summary = std::string(e.kind()) + " error: " + e.what();
    return outcome;
  }
  Artifacts files;
  files.csv("summary.csv", summary);
  try {
    outcome.artifacts_written = files.flush(o.out);
  } catch (const std::exception& e) {
    outcome.exit_code = kExitDomain;
    outcome.summary = std::string("write failed: ") + e.what();
    return outcome;
  }
  outcome.summary = "report: " + std::to_string(summary.size()) + " metrics from " + std::to_string(o.inputs.size()) +
                    " report(s)";
  return outcome;
}

inline CommandOutcome run_command(const std::string& name, const CommandOptions& o) {
  if (name == "train") return cmd_train(o);
  if (name == "attack") return cmd_attack(o);
  if (name == "defend") return cmd_defend(o);
  if (name == "distill") return cmd_distill(o);
  if (name == "detect") return cmd_detect(o);
  if (name == "natadv") return cmd_natadv(o);
  if (name == "eval") return cmd_eval(o);
  if (name == "report") return cmd_report(o);
  CommandOutcome bad;
  bad.exit_code = kExitUsage;
  bad.summary = "unknown command '" + name + "'";
  return bad;
}

}  // namespace advlab
