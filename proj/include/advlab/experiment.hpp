#pragma once

// Experiment configuration: a single JSON document with strict key checking.
//
// {
//   "schema_version": 1,
//   "experiment_id": "moons",
//   "seed": 7,
//   "dataset":  {"kind": "moons", "n": 600, "noise": 0.1, "test_fraction": 0.3,
//               "val_fraction": 0.2},
//   "model":    {"hidden": [32, 32], "activation": "relu"},
//   "train":    {"mode": "plain", "epochs": 200, "lr": 0.1, "batch_size": 32, "momentum": 0.9},
//   "attacks":  [{"name": "fgsm", "epsilon": 0.2}],
//   "defense":  {"pipeline": [{"op": "bit_depth", "params": {"bits": 4}}]},
//   "detectors": [{"kind": "squeeze", "fpr": 0.05}],
//   "natadv":   {"z_dim": 2, "clip_c": 0.05}
// }

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/defenses.hpp"
#include "advlab/natural_adv.hpp"
#include "advlab/persistence.hpp"
#include "advlab/squeeze.hpp"

namespace advlab {

struct DatasetSpec {
  std::string kind = "moons";  // moons | gmm | digits8x8 | idx | csv
  std::size_t n = 600;
  double noise = 0.1;
  std::vector<Vec> means = {{0.3, 0.3}, {0.7, 0.7}};
  double sigma = 0.08;
  std::string images;  // idx
  std::string labels;  // idx
  std::string path;    // csv
  std::string label_column = "label";
  double test_fraction = 0.3;
  double val_fraction = 0.2;  // of the training split; never seen by the classifier
};

struct ModelSpec {
  std::vector<std::size_t> hidden = {32, 32};
  Activation activation = Activation::relu;
  std::string path;  // pre-trained model.json; attack/defend/detect/natadv load it when set
};

struct TrainSpec {
  std::string mode = "plain";  // plain | adversarial | distilled
  TrainConfig config{.epochs = 200, .lr = 0.1, .batch_size = 32, .momentum = 0.9, .seed = 1, .shuffle = true};
  double mix_ratio = 0.5;
  std::string inner_attack = "fgsm";
  double adv_epsilon = 0.2;
  double adv_alpha = 0.05;
  std::size_t adv_iterations = 10;
  double temperature = 100.0;
  std::size_t teacher_epochs = 600;
  std::size_t student_epochs = 600;
  double distill_lr = 1.0;
};

struct AttackSpec {
  std::string name = "fgsm";  // fgsm | bim | illc | mifgsm | jsma
  AttackConfig config;
  std::size_t max_samples = 0;  // 0 = whole test split
};

struct DetectorSpec {
  std::string kind = "squeeze";  // squeeze | magnet | kde | binary
  double fpr = 0.05;
  std::string attack = "fgsm";
  double epsilon = 0.2;
  std::vector<std::size_t> hidden = {16};
  TrainConfig train{.epochs = 100, .lr = 0.05, .batch_size = 32, .momentum = 0.9, .seed = 3, .shuffle = true};
  double bandwidth = 0.0;   // kde; 0 selects the median heuristic
  double t_div = 10.0;      // magnet
  std::size_t layer = 0;    // binary: hidden layer index the detector reads
  std::vector<SqueezePipeline> squeezers = {{BitDepthSqueeze{1}}};
};

struct NatAdvSpec {
  WganConfig wgan;
  InverterConfig inverter;
  StochasticSearchConfig stochastic;
  HybridSearchConfig hybrid;
  std::size_t search_samples = 20;
};

struct ExperimentConfig {
  std::string experiment_id = "experiment";
  std::uint64_t seed = 1;
  DatasetSpec dataset;
  ModelSpec model;
  TrainSpec train;
  std::vector<AttackSpec> attacks = {AttackSpec{}};
  SqueezePipeline defense = {BitDepthSqueeze{4}};
  std::vector<DetectorSpec> detectors = {DetectorSpec{}};
  NatAdvSpec natadv;
};

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const json& j, std::string where, std::initializer_list<const char*> allowed) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
      (void)v;
      if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where_);
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return where_ + "." + key; }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path(key) + " has the wrong type");
    }
  }

  void get_positive(const char* key, double& out) const {
    get(key, out);
    if (has(key) && !(out > 0.0)) throw ConfigError(path(key) + " must be > 0");
  }

 private:
  const json& j_;
  std::string where_;
};

inline void read_train_config(const ConfigReader& r, TrainConfig& c) {
  r.get("epochs", c.epochs);
  r.get("lr", c.lr);
  r.get("batch_size", c.batch_size);
  r.get("momentum", c.momentum);
  r.get("shuffle", c.shuffle);
  if (c.batch_size == 0) throw ConfigError(r.path("batch_size") + " must be >= 1");
  if (!(c.lr > 0.0)) throw ConfigError(r.path("lr") + " must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError(r.path("momentum") + " must be in [0,1)");
}

inline SqueezeOp parse_squeeze_op(const json& j, const std::string& where) {
  ConfigReader r(j, where, {"op", "params"});
  std::string op;
  r.get("op", op);
  const json params = r.has("params") ? r.at("params") : json::object();
  if (op == "identity") {
    ConfigReader(params, where + ".params", {});
    return IdentitySqueeze{};
  }
  if (op == "bit_depth") {
    BitDepthSqueeze s;
    ConfigReader(params, where + ".params", {"bits"}).get("bits", s.bits);
    if (s.bits < 1 || s.bits > 7) throw ConfigError(where + ".params.bits must be in [1,7]");
    return s;
  }
  if (op == "median") {
    ConfigReader(params, where + ".params", {});
    return MedianSqueeze{};
  }
  if (op == "nonlocal") {
    NonLocalSqueeze s;
    ConfigReader p(params, where + ".params", {"search_window", "patch_size", "h", "sigma"});
    p.get("search_window", s.config.search_window);
    p.get("patch_size", s.config.patch_size);
    p.get("h", s.config.h);
    p.get("sigma", s.config.sigma);
    try {
      s.config.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    return s;
  }
  if (op == "svd") {
    SvdSqueeze s;
    ConfigReader(params, where + ".params", {"k"}).get("k", s.k);
    if (s.k == 0) throw ConfigError(where + ".params.k must be >= 1");
    return s;
  }
  throw ConfigError(where + ".op '" + op + "' is not a squeeze operation");
}

inline void check_attack_name(const std::string& name, const std::string& where) {
  static const std::set<std::string> names = {"fgsm", "bim", "illc", "mifgsm", "jsma"};
  if (!names.count(name)) throw ConfigError(where + ": unknown attack '" + name + "'");
}

}  // namespace detail

inline json squeeze_op_to_json(const SqueezeOp& op) {
  json j;
  j["op"] = squeeze_op_name(op);
  json p = json::object();
  if (const auto* b = std::get_if<BitDepthSqueeze>(&op)) p["bits"] = b->bits;
  if (const auto* nl = std::get_if<NonLocalSqueeze>(&op)) {
    p["search_window"] = nl->config.search_window;
    p["patch_size"] = nl->config.patch_size;
    p["h"] = nl->config.h;
    p["sigma"] = nl->config.sigma;
  }
  if (const auto* s = std::get_if<SvdSqueeze>(&op)) p["k"] = s->k;
  j["params"] = std::move(p);
  return j;
}

inline ExperimentConfig parse_experiment(const json& j) {
  using detail::ConfigReader;
  ExperimentConfig c;
  ConfigReader top(j, "config",
                   {"schema_version", "experiment_id", "seed", "dataset", "model", "train", "attacks", "defense",
                    "detectors", "natadv"});
  if (top.has("schema_version")) {
    int v = 0;
    top.get("schema_version", v);
    if (v != kSchemaVersion) throw MigrationError("config schema_version " + std::to_string(v) + " is not supported");
  }
  top.get("experiment_id", c.experiment_id);
  top.get("seed", c.seed);

  if (top.has("dataset")) {
    ConfigReader r(top.at("dataset"), "dataset",
                   {"kind", "n", "noise", "means", "sigma", "images", "labels", "path", "label_column", "test_fraction",
                    "val_fraction"});
    auto& d = c.dataset;
    r.get("kind", d.kind);
    r.get("n", d.n);
    r.get("noise", d.noise);
    r.get("means", d.means);
    r.get("sigma", d.sigma);
    r.get("images", d.images);
    r.get("labels", d.labels);
    r.get("path", d.path);
    r.get("label_column", d.label_column);
    r.get("test_fraction", d.test_fraction);
    r.get("val_fraction", d.val_fraction);
    static const std::set<std::string> kinds = {"moons", "gmm", "digits8x8", "idx", "csv"};
    if (!kinds.count(d.kind)) throw ConfigError("dataset.kind '" + d.kind + "' is not one of moons|gmm|digits8x8|idx|csv");
    if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) throw ConfigError("dataset.test_fraction must be in (0,1)");
    if (!(d.val_fraction > 0.0 && d.val_fraction < 1.0)) throw ConfigError("dataset.val_fraction must be in (0,1)");
    if ((d.kind == "moons" || d.kind == "gmm" || d.kind == "digits8x8") && d.n < 2) {
      throw ConfigError("dataset.n must be >= 2");
    }
    if (d.kind == "gmm" && d.means.size() < 2) throw ConfigError("dataset.means needs at least two components");
    if (d.noise < 0.0 || d.sigma < 0.0) throw ConfigError("dataset noise/sigma must be >= 0");
  }

  if (top.has("model")) {
    ConfigReader r(top.at("model"), "model", {"hidden", "activation", "path"});
    r.get("hidden", c.model.hidden);
    std::string act = to_string(c.model.activation);
    r.get("activation", act);
    try {
      c.model.activation = parse_activation(act);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("model.activation: ") + e.what());
    }
    r.get("path", c.model.path);
    for (auto h : c.model.hidden)
      if (h == 0) throw ConfigError("model.hidden widths must be >= 1");
  }

  if (top.has("train")) {
    ConfigReader r(top.at("train"), "train",
                   {"mode", "epochs", "lr", "batch_size", "momentum", "shuffle", "mix_ratio", "inner_attack",
                    "adv_epsilon", "adv_alpha", "adv_iterations", "temperature", "teacher_epochs", "student_epochs",
                    "distill_lr"});
    auto& t = c.train;
    r.get("mode", t.mode);
    detail::read_train_config(r, t.config);
    r.get("mix_ratio", t.mix_ratio);
    r.get("inner_attack", t.inner_attack);
    r.get("adv_epsilon", t.adv_epsilon);
    r.get("adv_alpha", t.adv_alpha);
    r.get("adv_iterations", t.adv_iterations);
    r.get("temperature", t.temperature);
    r.get("teacher_epochs", t.teacher_epochs);
    r.get("student_epochs", t.student_epochs);
    r.get_positive("distill_lr", t.distill_lr);
    if (t.mode != "plain" && t.mode != "adversarial" && t.mode != "distilled") {
      throw ConfigError("train.mode '" + t.mode + "' is not one of plain|adversarial|distilled");
    }
    if (t.inner_attack != "fgsm" && t.inner_attack != "bim") throw ConfigError("train.inner_attack must be fgsm or bim");
    if (!(t.mix_ratio >= 0.0 && t.mix_ratio <= 1.0)) throw ConfigError("train.mix_ratio must be in [0,1]");
    if (!(t.temperature > 1.0)) throw ConfigError("train.temperature must be > 1");
  }

  if (top.has("attacks")) {
    const json& arr = top.at("attacks");
    if (!arr.is_array()) throw ConfigError("attacks must be an array");
    c.attacks.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "attacks[" + std::to_string(i) + "]";
      ConfigReader r(arr[i], where,
                     {"name", "epsilon", "alpha", "iterations", "mu", "target", "theta", "upsilon", "seed", "max_samples"});
      AttackSpec a;
      r.get("name", a.name);
      detail::check_attack_name(a.name, where);
      r.get("epsilon", a.config.epsilon);
      r.get("alpha", a.config.alpha);
      r.get("iterations", a.config.iterations);
      r.get("mu", a.config.momentum_decay);
      if (r.has("target") && !r.at("target").is_null()) {
        std::size_t t = 0;
        r.get("target", t);
        a.config.target = t;
      }
      r.get("theta", a.config.theta);
      r.get("upsilon", a.config.upsilon);
      r.get("seed", a.config.seed);
      r.get("max_samples", a.max_samples);
      try {
        a.config.validate();
      } catch (const ParameterError& e) {
        throw ConfigError(where + ": " + e.what());
      }
      c.attacks.push_back(a);
    }
  }

  if (top.has("defense")) {
    ConfigReader r(top.at("defense"), "defense", {"pipeline"});
    if (r.has("pipeline")) {
      const json& arr = r.at("pipeline");
      if (!arr.is_array()) throw ConfigError("defense.pipeline must be an array");
      c.defense.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        c.defense.push_back(detail::parse_squeeze_op(arr[i], "defense.pipeline[" + std::to_string(i) + "]"));
      }
    }
  }

  if (top.has("detectors")) {
    const json& arr = top.at("detectors");
    if (!arr.is_array()) throw ConfigError("detectors must be an array");
    c.detectors.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "detectors[" + std::to_string(i) + "]";
      ConfigReader r(arr[i], where,
                     {"kind", "fpr", "attack", "epsilon", "hidden", "epochs", "lr", "batch_size", "momentum", "shuffle",
                      "bandwidth", "t_div", "layer", "squeezers"});
      DetectorSpec d;
      r.get("kind", d.kind);
      if (d.kind != "squeeze" && d.kind != "magnet" && d.kind != "kde" && d.kind != "binary") {
        throw ConfigError(where + ".kind '" + d.kind + "' is not one of squeeze|magnet|kde|binary");
      }
      r.get("fpr", d.fpr);
      r.get("attack", d.attack);
      detail::check_attack_name(d.attack, where);
      r.get("epsilon", d.epsilon);
      r.get("hidden", d.hidden);
      detail::read_train_config(r, d.train);
      r.get("bandwidth", d.bandwidth);
      r.get("t_div", d.t_div);
      r.get("layer", d.layer);
      if (r.has("squeezers")) {
        const json& sq = r.at("squeezers");
        if (!sq.is_array() || sq.empty()) throw ConfigError(where + ".squeezers must be a non-empty array of pipelines");
        d.squeezers.clear();
        for (std::size_t k = 0; k < sq.size(); ++k) {
          const std::string pw = where + ".squeezers[" + std::to_string(k) + "]";
          if (!sq[k].is_array()) throw ConfigError(pw + " must be an array of operations");
          SqueezePipeline pipe;
          for (std::size_t o = 0; o < sq[k].size(); ++o) {
            pipe.push_back(detail::parse_squeeze_op(sq[k][o], pw + "[" + std::to_string(o) + "]"));
          }
          d.squeezers.push_back(std::move(pipe));
        }
      }
      if (!(d.fpr > 0.0 && d.fpr < 1.0)) throw ConfigError(where + ".fpr must be in (0,1)");
      if (!(d.epsilon >= 0.0)) throw ConfigError(where + ".epsilon must be >= 0");
      c.detectors.push_back(d);
    }
  }

  if (top.has("natadv")) {
    ConfigReader r(top.at("natadv"), "natadv",
                   {"z_dim", "clip_c", "n_critic", "steps", "lr", "momentum", "batch_size", "generator_hidden",
                    "critic_hidden", "inverter_hidden", "inverter_steps", "inverter_lr", "lambda", "delta_r",
                    "n_per_ring", "max_radius", "r_hi", "n_per_iter", "iters", "min_gap", "search_samples"});
    auto& n = c.natadv;
    r.get("z_dim", n.wgan.z_dim);
    r.get_positive("clip_c", n.wgan.clip_c);
    r.get("n_critic", n.wgan.n_critic);
    r.get("steps", n.wgan.steps);
    r.get_positive("lr", n.wgan.lr);
    r.get("momentum", n.wgan.momentum);
    r.get("batch_size", n.wgan.batch_size);
    r.get("generator_hidden", n.wgan.generator_hidden);
    r.get("critic_hidden", n.wgan.critic_hidden);
    r.get("inverter_hidden", n.inverter.hidden);
    r.get("inverter_steps", n.inverter.steps);
    r.get_positive("inverter_lr", n.inverter.lr);
    r.get("lambda", n.inverter.lambda);
    r.get_positive("delta_r", n.stochastic.delta_r);
    r.get("n_per_ring", n.stochastic.n_per_ring);
    r.get_positive("max_radius", n.stochastic.max_radius);
    r.get_positive("r_hi", n.hybrid.r_hi);
    r.get("n_per_iter", n.hybrid.n_per_iter);
    r.get("iters", n.hybrid.iters);
    r.get("min_gap", n.hybrid.min_gap);
    r.get("search_samples", n.search_samples);
    if (n.wgan.z_dim == 0) throw ConfigError("natadv.z_dim must be >= 1");
    if (n.wgan.n_critic == 0 || n.wgan.batch_size == 0) throw ConfigError("natadv.n_critic and batch_size must be >= 1");
    if (n.inverter.lambda < 0.0) throw ConfigError("natadv.lambda must be >= 0");
  }
  return c;
}

inline json pipeline_to_json(const SqueezePipeline& p) {
  json a = json::array();
  for (const auto& op : p) a.push_back(squeeze_op_to_json(op));
  return a;
}

// Effective configuration, in the same schema parse_experiment reads.
inline json experiment_to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["experiment_id"] = c.experiment_id;
  j["seed"] = c.seed;
  const auto& d = c.dataset;
  json dj{{"kind", d.kind}, {"test_fraction", d.test_fraction}, {"val_fraction", d.val_fraction}};
  if (d.kind == "moons") {
    dj["n"] = d.n;
    dj["noise"] = d.noise;
  } else if (d.kind == "gmm") {
    dj["n"] = d.n;
    dj["means"] = d.means;
    dj["sigma"] = d.sigma;
  } else if (d.kind == "digits8x8") {
    dj["n"] = d.n;
  } else if (d.kind == "idx") {
    dj["images"] = d.images;
    dj["labels"] = d.labels;
  } else {
    dj["path"] = d.path;
    dj["label_column"] = d.label_column;
  }
  j["dataset"] = std::move(dj);
  json mj{{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}};
  if (!c.model.path.empty()) mj["path"] = c.model.path;
  j["model"] = std::move(mj);
  const auto& t = c.train;
  j["train"] = json{{"mode", t.mode},
                    {"epochs", t.config.epochs},
                    {"lr", t.config.lr},
                    {"batch_size", t.config.batch_size},
                    {"momentum", t.config.momentum},
                    {"shuffle", t.config.shuffle},
                    {"mix_ratio", t.mix_ratio},
                    {"inner_attack", t.inner_attack},
                    {"adv_epsilon", t.adv_epsilon},
                    {"adv_alpha", t.adv_alpha},
                    {"adv_iterations", t.adv_iterations},
                    {"temperature", t.temperature},
                    {"teacher_epochs", t.teacher_epochs},
                    {"student_epochs", t.student_epochs},
                    {"distill_lr", t.distill_lr}};
  json attacks = json::array();
  for (const auto& a : c.attacks) {
    json aj{{"name", a.name},
            {"epsilon", a.config.epsilon},
            {"alpha", a.config.alpha},
            {"iterations", a.config.iterations},
            {"mu", a.config.momentum_decay},
            {"theta", a.config.theta},
            {"upsilon", a.config.upsilon},
            {"seed", a.config.seed},
            {"max_samples", a.max_samples}};
    aj["target"] = a.config.target ? json(*a.config.target) : json(nullptr);
    attacks.push_back(std::move(aj));
  }
  j["attacks"] = std::move(attacks);
  j["defense"] = json{{"pipeline", pipeline_to_json(c.defense)}};
  json dets = json::array();
  for (const auto& d2 : c.detectors) {
    json sq = json::array();
    for (const auto& p : d2.squeezers) sq.push_back(pipeline_to_json(p));
    dets.push_back(json{{"kind", d2.kind},
                        {"fpr", d2.fpr},
                        {"attack", d2.attack},
                        {"epsilon", d2.epsilon},
                        {"hidden", d2.hidden},
                        {"epochs", d2.train.epochs},
                        {"lr", d2.train.lr},
                        {"batch_size", d2.train.batch_size},
                        {"momentum", d2.train.momentum},
                        {"shuffle", d2.train.shuffle},
                        {"bandwidth", d2.bandwidth},
                        {"t_div", d2.t_div},
                        {"layer", d2.layer},
                        {"squeezers", std::move(sq)}});
  }
  j["detectors"] = std::move(dets);
  const auto& n = c.natadv;
  j["natadv"] = json{{"z_dim", n.wgan.z_dim},
                     {"clip_c", n.wgan.clip_c},
                     {"n_critic", n.wgan.n_critic},
                     {"steps", n.wgan.steps},
                     {"lr", n.wgan.lr},
                     {"momentum", n.wgan.momentum},
                     {"batch_size", n.wgan.batch_size},
                     {"generator_hidden", n.wgan.generator_hidden},
                     {"critic_hidden", n.wgan.critic_hidden},
                     {"inverter_hidden", n.inverter.hidden},
                     {"inverter_steps", n.inverter.steps},
                     {"inverter_lr", n.inverter.lr},
                     {"lambda", n.inverter.lambda},
                     {"delta_r", n.stochastic.delta_r},
                     {"n_per_ring", n.stochastic.n_per_ring},
                     {"max_radius", n.stochastic.max_radius},
                     {"r_hi", n.hybrid.r_hi},
                     {"n_per_iter", n.hybrid.n_per_iter},
                     {"iters", n.hybrid.iters},
                     {"min_gap", n.hybrid.min_gap},
                     {"search_samples", n.search_samples}};
  return j;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return parse_experiment(j);
}

// Builds the configured dataset (deterministic in `seed`).
inline Dataset build_dataset(const DatasetSpec& d, std::uint64_t seed) {
  if (d.kind == "moons") return gen_moons(d.n, d.noise, seed);
  if (d.kind == "gmm") return gen_gmm(d.means, d.sigma, d.n, seed);
  if (d.kind == "digits8x8") return gen_digits8x8(d.n, seed);
  if (d.kind == "idx") return load_idx(d.images, d.labels);
  return load_csv(d.path, d.label_column).dataset;
}

// Checks that input files referenced by the dataset spec exist.
inline void check_dataset_inputs(const DatasetSpec& d) {
  auto need = [](const std::string& p, const char* key) {
    if (p.empty()) throw ConfigError(std::string("dataset.") + key + " is required");
    if (!std::filesystem::exists(p)) throw ConfigError(std::string("dataset.") + key + " '" + p + "' does not exist");
  };
  if (d.kind == "idx") {
    need(d.images, "images");
    need(d.labels, "labels");
  }
  if (d.kind == "csv") need(d.path, "path");
}

}  // namespace advlab
