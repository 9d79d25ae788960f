#pragma once

// Reactive detectors: squeeze comparison, MagNet-style autoencoder detector and
// reformer, kernel density on final hidden features, and a binary subnetwork.
// Every verdict follows one convention: higher score = more adversarial.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advlab/data.hpp"
#include "advlab/errors.hpp"
#include "advlab/nn.hpp"
#include "advlab/squeeze.hpp"

namespace advlab {

struct DetectionVerdict {
  double score = 0.0;
  double threshold = 0.0;
  bool is_adversarial = false;  // score > threshold
  std::string detector;
  std::map<std::string, double> components;
};

inline DetectionVerdict make_verdict(std::string detector, double score, double threshold) {
  return {score, threshold, score > threshold, std::move(detector), {}};
}

// ---------------------------------------------------------------------------
// ROC tooling

struct ScoredLabel {
  double score = 0.0;
  bool adversarial = false;
};

// Mann-Whitney AUC with mid-ranks, so ties count one half.
inline double roc_auc(std::span<const ScoredLabel> scores) {
  std::size_t n_pos = 0;
  for (const auto& s : scores) n_pos += s.adversarial ? 1 : 0;
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedAucError("ROC AUC needs both clean and adversarial scores");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].score < scores[b].score; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]].score == scores[order[i]].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (scores[order[k]].adversarial) rank_sum += mid_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// One point per distinct threshold, from (0,0) to (1,1).
inline std::vector<RocPoint> roc_curve(std::span<const ScoredLabel> scores) {
  std::size_t n_pos = 0;
  for (const auto& s : scores) n_pos += s.adversarial ? 1 : 0;
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedAucError("ROC curve needs both clean and adversarial scores");
  std::vector<ScoredLabel> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score > b.score; });
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].adversarial ? tp : fp) += 1;
      ++j;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                     static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return curve;
}

// Threshold such that at most a `fpr` fraction of the clean validation scores
// lie strictly above it.
inline double threshold_at_fpr(std::span<const double> clean_scores, double fpr) {
  if (clean_scores.empty()) throw ParameterError("threshold_at_fpr needs validation scores");
  if (!(fpr >= 0.0 && fpr < 1.0)) throw ParameterError("false-positive rate must be in [0,1)");
  std::vector<double> s(clean_scores.begin(), clean_scores.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  auto idx = static_cast<std::ptrdiff_t>(std::ceil((1.0 - fpr) * n - 1e-9)) - 1;
  idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(s.size()) - 1);
  return s[static_cast<std::size_t>(idx)];
}

// ---------------------------------------------------------------------------
// Squeeze comparison

// Max over squeezers of || f(x) - f(squeeze(x)) ||_1 on the model's probabilities.
inline double squeeze_score(const Model& model, std::span<const double> x, const std::vector<SqueezePipeline>& squeezers,
                            std::optional<ImageShape> shape) {
  if (squeezers.empty()) throw ConfigError("squeeze detector needs at least one squeezer");
  const Vec p = forward(model, x).output;
  double worst = 0.0;
  for (const auto& pipe : squeezers) {
    const Vec q = forward(model, apply_pipeline(pipe, x, shape)).output;
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
    worst = std::max(worst, d);
  }
  return worst;
}

inline DetectionVerdict squeeze_detect(const Model& model, std::span<const double> x,
                                       const std::vector<SqueezePipeline>& squeezers, std::optional<ImageShape> shape,
                                       double threshold) {
  return make_verdict("squeeze", squeeze_score(model, x, squeezers, shape), threshold);
}

// ---------------------------------------------------------------------------
// Autoencoders (MagNet)

struct Autoencoder {
  Model model;              // sigmoid head, output dim = input dim
  double train_mse = 0.0;   // mean squared reconstruction error on the training data
  Vec loss_history;

  Vec reconstruct(std::span<const double> x) const { return forward(model, x).output; }
};

inline double reconstruction_mse(const Model& ae, std::span<const Vec> data) {
  double total = 0.0;
  for (const auto& x : data) {
    const Vec out = forward(ae, x).output;
    total += squared_distance(out, x) / static_cast<double>(x.size());
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

inline Autoencoder train_autoencoder(std::span<const Vec> data, const std::vector<std::size_t>& hidden_dims,
                                     const TrainConfig& cfg, Activation act = Activation::relu) {
  if (data.empty()) throw ParameterError("autoencoder training set is empty");
  const std::size_t d = data.front().size();
  std::vector<std::size_t> dims{d};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(d);
  Model init = make_model(dims, act, cfg.seed ^ 0xae5eedULL, OutputHead::sigmoid);
  const double inv_d = 1.0 / static_cast<double>(d);
  TrainResult tr = fit(std::move(init), data.size(), cfg,
                       [&](const Model& m, std::span<const std::size_t> batch, ParamGrads& g) {
                         double total = 0.0;
                         for (std::size_t i : batch) {
                           const Vec& x = data[i];
                           const ForwardResult f = forward(m, x);
                           Vec up(d);
                           for (std::size_t j = 0; j < d; ++j) {
                             const double o = f.output[j];
                             up[j] = 2.0 * inv_d * (o - x[j]) * o * (1.0 - o);
                           }
                           backprop(m, f, std::move(up), &g);
                           total += squared_distance(f.output, x) * inv_d;
                         }
                         return total;
                       });
  Autoencoder ae;
  ae.model = std::move(tr.model);
  ae.loss_history = std::move(tr.loss_history);
  ae.train_mse = reconstruction_mse(ae.model, data);
  return ae;
}

inline std::vector<Vec> features_of(const Dataset& d) {
  std::vector<Vec> xs;
  xs.reserve(d.size());
  for (const auto& s : d.samples) xs.push_back(s.x);
  return xs;
}

// Jensen-Shannon divergence (natural log), in [0, ln 2].
inline double jensen_shannon(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("JSD: distributions differ in length");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::clamp(js, 0.0, std::numbers::ln2);
}

inline double reconstruction_error(const Autoencoder& ae, std::span<const double> x) {
  if (ae.model.input_dim() != x.size()) throw ShapeError("autoencoder input dim does not match sample");
  return std::sqrt(squared_distance(x, ae.reconstruct(x)));
}

inline double magnet_divergence(const Autoencoder& ae, const Model& model, std::span<const double> x, double t_div) {
  const Vec rx = ae.reconstruct(x);
  const Vec p = softmax_t(forward(model, x).logits, t_div);
  const Vec q = softmax_t(forward(model, rx).logits, t_div);
  return jensen_shannon(p, q);
}

// Adversarial if either the reconstruction error or the divergence exceeds its
// threshold. The unified score is max(recon / recon_threshold, div / div_threshold)
// against a threshold of 1.
inline DetectionVerdict magnet_detect(const Autoencoder& ae, const Model& model, std::span<const double> x,
                                      double recon_threshold, double div_threshold, double t_div = 10.0) {
  if (!(recon_threshold > 0.0) || !(div_threshold > 0.0)) throw ParameterError("MagNet thresholds must be > 0");
  const double recon = reconstruction_error(ae, x);
  const double div = magnet_divergence(ae, model, x, t_div);
  DetectionVerdict v = make_verdict("magnet", std::max(recon / recon_threshold, div / div_threshold), 1.0);
  v.components["reconstruction_error"] = recon;
  v.components["divergence"] = div;
  return v;
}

struct Reformed {
  Vec x;
  std::size_t chosen_index = 0;
};

// Draws one autoencoder uniformly from the pool and returns its clamped reconstruction.
inline Reformed magnet_reform(std::span<const Autoencoder> pool, std::span<const double> x, std::uint64_t seed) {
  if (pool.empty()) throw ParameterError("MagNet reformer pool is empty");
  Rng rng(seed);
  Reformed r;
  r.chosen_index = rng.uniform_index(pool.size());
  r.x = pool[r.chosen_index].reconstruct(x);
  for (double& v : r.x) v = clamp01(v);
  return r;
}

// ---------------------------------------------------------------------------
// Kernel density on final hidden features

struct KdeBanks {
  std::vector<std::vector<Vec>> per_class;
};

inline Vec final_hidden(const ForwardResult& f) {
  if (f.hidden.empty()) throw ConfigError("KDE needs a model with at least one hidden layer");
  return f.hidden.back();
}

inline KdeBanks kde_fit(const Model& model, const Dataset& data) {
  KdeBanks banks;
  banks.per_class.resize(model.output_dim());
  for (const auto& s : data.samples) {
    const std::size_t y = hard_label(s.y);
    if (y >= banks.per_class.size()) throw ConfigError("sample label outside the model's classes");
    banks.per_class[y].push_back(final_hidden(forward(model, s.x)));
  }
  for (std::size_t c = 0; c < banks.per_class.size(); ++c)
    if (banks.per_class[c].empty()) throw ConfigError("KDE bank for class " + std::to_string(c) + " is empty");
  return banks;
}

// Median pairwise feature distance over all banks, divided by sqrt(2). At most
// 1500 features (evenly strided) enter the median.
inline double kde_default_bandwidth(const KdeBanks& banks) {
  std::vector<const Vec*> all;
  for (const auto& b : banks.per_class)
    for (const auto& f : b) all.push_back(&f);
  constexpr std::size_t cap = 1500;
  std::vector<const Vec*> pick;
  const std::size_t stride = all.size() > cap ? (all.size() + cap - 1) / cap : 1;
  for (std::size_t i = 0; i < all.size(); i += stride) pick.push_back(all[i]);
  std::vector<double> d;
  d.reserve(pick.size() * (pick.size() - 1) / 2);
  for (std::size_t i = 0; i < pick.size(); ++i)
    for (std::size_t j = i + 1; j < pick.size(); ++j) d.push_back(std::sqrt(squared_distance(*pick[i], *pick[j])));
  if (d.empty()) throw ConfigError("KDE bandwidth needs at least two features");
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  const double med = d[d.size() / 2];
  return med > 0.0 ? med / std::sqrt(2.0) : 1.0;
}

// Mean Gaussian kernel between phi(x) and the bank of the predicted class.
inline double kde_score(const Model& model, const KdeBanks& banks, std::span<const double> x, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ParameterError("KDE bandwidth must be > 0");
  const ForwardResult f = forward(model, x);
  const std::size_t c = argmax(f.output);
  const auto& bank = banks.per_class.at(c);
  if (bank.empty()) throw ConfigError("KDE bank for class " + std::to_string(c) + " is empty");
  const Vec phi = final_hidden(f);
  const double denom = 2.0 * bandwidth * bandwidth;
  double acc = 0.0;
  for (const auto& b : bank) acc += std::exp(-squared_distance(phi, b) / denom);
  return acc / static_cast<double>(bank.size());
}

inline DetectionVerdict kde_detect(const Model& model, const KdeBanks& banks, std::span<const double> x,
                                   double bandwidth, double threshold) {
  const double density = kde_score(model, banks, x, bandwidth);
  DetectionVerdict v = make_verdict("kde", -density, threshold);
  v.components["density"] = density;
  return v;
}

// ---------------------------------------------------------------------------
// Binary subnetwork detector

struct BinaryDetector {
  Model detector;              // 2-class: 0 clean, 1 adversarial
  std::size_t layer_index = 0; // which hidden layer of the classifier feeds it
  Vec loss_history;

  Vec features(const Model& model, std::span<const double> x) const {
    const ForwardResult f = forward(model, x);
    return f.hidden.at(layer_index);
  }
  double score(const Model& model, std::span<const double> x) const {
    return forward(detector, features(model, x)).output[1];
  }
  DetectionVerdict verdict(const Model& model, std::span<const double> x, double threshold) const {
    return make_verdict("binary", score(model, x), threshold);
  }
};

inline BinaryDetector binary_detector(const Model& model, std::span<const Vec> clean_set, std::span<const Vec> adv_set,
                                      std::size_t layer_index, const std::vector<std::size_t>& detector_hidden,
                                      const TrainConfig& cfg) {
  if (clean_set.empty() || adv_set.empty()) throw ParameterError("binary detector needs clean and adversarial sets");
  if (layer_index + 1 >= model.layer_count()) {
    throw ParameterError("layer index " + std::to_string(layer_index) + " is not a hidden layer");
  }
  BinaryDetector det;
  det.layer_index = layer_index;
  std::vector<Sample> train;
  train.reserve(clean_set.size() + adv_set.size());
  for (const auto& x : clean_set) train.push_back({det.features(model, x), std::size_t{0}});
  for (const auto& x : adv_set) train.push_back({det.features(model, x), std::size_t{1}});
  const auto dims = std::vector<std::size_t>{model.layer_dims[layer_index + 1]};
  std::vector<std::size_t> all = dims;
  all.insert(all.end(), detector_hidden.begin(), detector_hidden.end());
  all.push_back(2);
  TrainResult tr = train_sgd(make_model(all, Activation::relu, cfg.seed ^ 0xde7ec7ULL), train, cfg);
  det.detector = std::move(tr.model);
  det.loss_history = std::move(tr.loss_history);
  return det;
}

}  // namespace advlab
