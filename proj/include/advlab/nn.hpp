#pragma once

// Feed-forward dense networks with analytic gradients w.r.t. parameters and
// inputs, full input Jacobians, and temperature softmax.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "advlab/errors.hpp"
#include "advlab/matrix.hpp"
#include "advlab/rng.hpp"
#include "advlab/tolerances.hpp"

namespace advlab {

enum class Activation { relu, tanh };

// What the last layer emits. Classifiers use softmax; critics, generators and
// inverters use identity; autoencoders use sigmoid so reconstructions stay in [0,1].
enum class OutputHead { softmax, identity, sigmoid };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline std::string to_string(OutputHead h) {
  switch (h) {
    case OutputHead::softmax: return "softmax";
    case OutputHead::identity: return "identity";
    case OutputHead::sigmoid: return "sigmoid";
  }
  return "softmax";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ParameterError("unknown activation '" + s + "'");
}

inline OutputHead parse_output_head(const std::string& s) {
  if (s == "softmax") return OutputHead::softmax;
  if (s == "identity") return OutputHead::identity;
  if (s == "sigmoid") return OutputHead::sigmoid;
  throw ParameterError("unknown output head '" + s + "'");
}

struct Model {
  std::vector<std::size_t> layer_dims;  // input, hidden..., output
  std::vector<Matrix> weights;          // weights[l] is layer_dims[l+1] x layer_dims[l]
  std::vector<Vec> biases;
  Activation hidden_activation = Activation::relu;
  OutputHead output_head = OutputHead::softmax;
  double temperature = 1.0;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t layer_count() const { return weights.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].data.size() + biases[l].size();
    return n;
  }

  void validate() const {
    if (layer_dims.size() < 2) throw ShapeError("model needs at least an input and an output layer");
    if (weights.size() + 1 != layer_dims.size() || biases.size() != weights.size()) {
      throw ShapeError("model has " + std::to_string(weights.size()) + " weight matrices for " +
                       std::to_string(layer_dims.size()) + " layer dims");
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows != layer_dims[l + 1] || weights[l].cols != layer_dims[l] ||
          weights[l].data.size() != weights[l].rows * weights[l].cols) {
        throw ShapeError("layer " + std::to_string(l) + " weight shape does not match layer dims");
      }
      if (biases[l].size() != layer_dims[l + 1]) {
        throw ShapeError("layer " + std::to_string(l) + " bias length does not match layer dims");
      }
    }
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw ParameterError("temperature must be positive, got " + std::to_string(temperature));
    }
    if (output_head == OutputHead::softmax && output_dim() < 2) {
      throw ShapeError("softmax classifier needs at least 2 classes");
    }
  }

  bool operator==(const Model&) const = default;
};

// Glorot-uniform weights, zero biases.
inline Model make_model(std::vector<std::size_t> dims, Activation act, Rng& rng,
                        OutputHead head = OutputHead::softmax, double temperature = 1.0) {
  Model m;
  m.layer_dims = std::move(dims);
  m.hidden_activation = act;
  m.output_head = head;
  m.temperature = temperature;
  if (m.layer_dims.size() < 2) throw ShapeError("model needs at least an input and an output layer");
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    const std::size_t fan_in = m.layer_dims[l];
    const std::size_t fan_out = m.layer_dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(fan_out, 0.0);
  }
  m.validate();
  return m;
}

inline Model make_model(std::vector<std::size_t> dims, Activation act, std::uint64_t seed,
                        OutputHead head = OutputHead::softmax, double temperature = 1.0) {
  Rng rng(seed);
  return make_model(std::move(dims), act, rng, head, temperature);
}

inline Model zero_model(std::vector<std::size_t> dims, Activation act = Activation::relu,
                        OutputHead head = OutputHead::softmax) {
  Model m;
  m.layer_dims = std::move(dims);
  m.hidden_activation = act;
  m.output_head = head;
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    m.weights.emplace_back(m.layer_dims[l + 1], m.layer_dims[l]);
    m.biases.emplace_back(m.layer_dims[l + 1], 0.0);
  }
  m.validate();
  return m;
}

// q_i = exp(z_i / T) / sum_j exp(z_j / T), with max subtraction.
inline Vec softmax_t(std::span<const double> z, double temperature) {
  if (!(temperature > 0.0)) {
    throw ParameterError("softmax temperature must be > 0, got " + std::to_string(temperature));
  }
  if (z.empty()) throw ShapeError("softmax of empty vector");
  Vec q(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) q[i] = z[i] / temperature;
  const double mx = *std::max_element(q.begin(), q.end());
  double sum = 0.0;
  for (double& v : q) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : q) v /= sum;
  return q;
}

// Class index or a soft-label distribution.
using Label = std::variant<std::size_t, Vec>;

struct Sample {
  Vec x;
  Label y;
};

inline std::size_t hard_label(const Label& y) {
  if (const auto* idx = std::get_if<std::size_t>(&y)) return *idx;
  return argmax(std::get<Vec>(y));
}

inline Vec target_distribution(const Label& y, std::size_t classes) {
  if (const auto* idx = std::get_if<std::size_t>(&y)) {
    if (*idx >= classes) {
      throw ShapeError("label " + std::to_string(*idx) + " outside " + std::to_string(classes) +
                       " classes");
    }
    Vec t(classes, 0.0);
    t[*idx] = 1.0;
    return t;
  }
  const Vec& soft = std::get<Vec>(y);
  if (soft.size() != classes) throw ShapeError("soft label length does not match class count");
  double sum = 0.0;
  for (double v : soft) sum += v;
  if (std::abs(sum - 1.0) > Tolerances::soft_label_sum) {
    throw ParameterError("soft label sums to " + std::to_string(sum));
  }
  return soft;
}

struct ForwardResult {
  Vec input;
  std::vector<Vec> pre;     // hidden pre-activations
  std::vector<Vec> hidden;  // hidden post-activations, one per hidden layer
  Vec logits;
  Vec output;               // probabilities for softmax heads
};

namespace detail {

inline double activate(Activation a, double v) {
  return a == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
}

// Derivative expressed through the pre-activation and the activation value.
inline double activate_grad(Activation a, double pre, double post) {
  return a == Activation::relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0 - post * post;
}

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Vec affine(const Matrix& w, const Vec& b, std::span<const double> x) {
  Vec y = matvec(w, x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

}  // namespace detail

inline Vec apply_head(const Model& model, std::span<const double> logits) {
  switch (model.output_head) {
    case OutputHead::softmax: return softmax_t(logits, model.temperature);
    case OutputHead::identity: return Vec(logits.begin(), logits.end());
    case OutputHead::sigmoid: {
      Vec out(logits.size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(logits[i]);
      return out;
    }
  }
  return {};
}

inline ForwardResult forward(const Model& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw ShapeError("input of length " + std::to_string(x.size()) + " for model expecting " +
                     std::to_string(model.input_dim()));
  }
  ForwardResult r;
  r.input.assign(x.begin(), x.end());
  std::span<const double> a = r.input;
  const std::size_t layers = model.layer_count();
  r.pre.reserve(layers - 1);
  r.hidden.reserve(layers - 1);
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    Vec pre = detail::affine(model.weights[l], model.biases[l], a);
    Vec post(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) post[i] = detail::activate(model.hidden_activation, pre[i]);
    r.pre.push_back(std::move(pre));
    r.hidden.push_back(std::move(post));
    a = r.hidden.back();
  }
  r.logits = detail::affine(model.weights[layers - 1], model.biases[layers - 1], a);
  r.output = apply_head(model, r.logits);
  return r;
}

inline std::size_t predict(const Model& model, std::span<const double> x) {
  return argmax(forward(model, x).output);
}

// Per-layer parameter gradients shaped like the model.
struct ParamGrads {
  std::vector<Matrix> weights;
  std::vector<Vec> biases;

  static ParamGrads zeros_like(const Model& m) {
    ParamGrads g;
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
      g.weights.emplace_back(m.weights[l].rows, m.weights[l].cols);
      g.biases.emplace_back(m.biases[l].size(), 0.0);
    }
    return g;
  }

  void set_zero() {
    for (auto& w : weights) std::fill(w.data.begin(), w.data.end(), 0.0);
    for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
  }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.all_finite()) return false;
    for (const auto& b : biases)
      for (double v : b)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

struct GradReport {
  ParamGrads params;
  Vec input_grad;
  double loss = 0.0;
};

// Back-propagates `upstream` = dL/dlogits. Parameter gradients are added into
// `params` (scaled by `scale`) when non-null. Returns dL/dx.
inline Vec backprop(const Model& model, const ForwardResult& fwd, Vec upstream,
                    ParamGrads* params = nullptr, double scale = 1.0) {
  if (upstream.size() != model.output_dim()) throw ShapeError("upstream gradient length mismatch");
  Vec delta = std::move(upstream);
  for (std::size_t l = model.layer_count(); l-- > 0;) {
    const Vec& a_in = l == 0 ? fwd.input : fwd.hidden[l - 1];
    const Matrix& w = model.weights[l];
    if (params != nullptr) {
      Matrix& gw = params->weights[l];
      Vec& gb = params->biases[l];
      for (std::size_t r = 0; r < w.rows; ++r) {
        const double d = scale * delta[r];
        gb[r] += d;
        if (d == 0.0) continue;
        auto grow = gw.row(r);
        for (std::size_t c = 0; c < w.cols; ++c) grow[c] += d * a_in[c];
      }
    }
    Vec next(w.cols, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const auto wrow = w.row(r);
      for (std::size_t c = 0; c < w.cols; ++c) next[c] += wrow[c] * d;
    }
    if (l > 0) {
      const Vec& pre = fwd.pre[l - 1];
      const Vec& post = fwd.hidden[l - 1];
      for (std::size_t i = 0; i < next.size(); ++i) {
        next[i] *= detail::activate_grad(model.hidden_activation, pre[i], post[i]);
      }
    }
    delta = std::move(next);
  }
  return delta;
}

// Cross-entropy of softmax_T(logits) against a hard or soft target, from the
// log-softmax so tiny losses keep their relative precision. Log terms are
// floored at log(Tolerances::log_clamp).
inline double cross_entropy(std::span<const double> logits, double temperature, std::span<const double> target) {
  std::size_t top = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[top]) top = i;
  const double mx = logits[top] / temperature;
  double rest = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != top) rest += std::exp(logits[i] / temperature - mx);
  const double log_sum = std::log1p(rest);
  const double floor = std::log(Tolerances::log_clamp);
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (target[i] == 0.0) continue;
    loss -= target[i] * std::max(logits[i] / temperature - mx - log_sum, floor);
  }
  return loss;
}

inline void require_classifier(const Model& model) {
  if (model.output_head != OutputHead::softmax) {
    throw ParameterError("operation requires a softmax classifier head");
  }
}

inline double loss(const Model& model, std::span<const double> x, const Label& y) {
  require_classifier(model);
  const ForwardResult f = forward(model, x);
  return cross_entropy(f.logits, model.temperature, target_distribution(y, model.output_dim()));
}

// dL/dlogits for softmax_T + cross-entropy is (p - y) / T. The clamp only
// guards the reported loss value.
inline Vec logit_gradient(const Model& model, const ForwardResult& fwd, std::span<const double> target) {
  Vec g(fwd.output.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (fwd.output[i] - target[i]) / model.temperature;
  return g;
}

inline GradReport backward(const Model& model, std::span<const double> x, const Label& y) {
  require_classifier(model);
  const ForwardResult f = forward(model, x);
  const Vec target = target_distribution(y, model.output_dim());
  GradReport rep;
  rep.params = ParamGrads::zeros_like(model);
  rep.loss = cross_entropy(f.logits, model.temperature, target);
  rep.input_grad = backprop(model, f, logit_gradient(model, f, target), &rep.params);
  return rep;
}

// Gradient of the loss w.r.t. the input only; `fwd_out` receives the forward pass at x.
inline Vec input_gradient(const Model& model, std::span<const double> x, const Label& y,
                          ForwardResult* fwd_out = nullptr) {
  require_classifier(model);
  ForwardResult f = forward(model, x);
  const Vec target = target_distribution(y, model.output_dim());
  Vec g = backprop(model, f, logit_gradient(model, f, target));
  if (fwd_out != nullptr) *fwd_out = std::move(f);
  return g;
}

enum class JacobianOutput { probabilities, logits };

// d logits / d x as a (classes x inputs) matrix, by forward accumulation.
inline Matrix logit_jacobian(const Model& model, const ForwardResult& fwd) {
  Matrix acc = model.weights[0];
  for (std::size_t l = 1; l < model.layer_count(); ++l) {
    const Vec& pre = fwd.pre[l - 1];
    const Vec& post = fwd.hidden[l - 1];
    for (std::size_t r = 0; r < acc.rows; ++r) {
      const double g = detail::activate_grad(model.hidden_activation, pre[r], post[r]);
      for (double& v : acc.row(r)) v *= g;
    }
    acc = matmul(model.weights[l], acc);
  }
  return acc;
}

// Entry (j, i) = dF_j/dx_i. With JacobianOutput::probabilities F is the
// softmax at T = 1 regardless of the model's temperature.
inline Matrix input_jacobian(const Model& model, std::span<const double> x,
                             JacobianOutput out = JacobianOutput::probabilities,
                             ForwardResult* fwd_out = nullptr) {
  ForwardResult f = forward(model, x);
  Matrix jz = logit_jacobian(model, f);
  Matrix result = jz;
  if (out == JacobianOutput::probabilities) {
    const Vec p = softmax_t(f.logits, 1.0);
    const std::size_t k = p.size();
    for (std::size_t i = 0; i < jz.cols; ++i) {
      double pj_dot = 0.0;  // sum_k p_k dz_k/dx_i
      for (std::size_t c = 0; c < k; ++c) pj_dot += p[c] * jz(c, i);
      for (std::size_t j = 0; j < k; ++j) result(j, i) = p[j] * (jz(j, i) - pj_dot);
    }
  }
  if (fwd_out != nullptr) *fwd_out = std::move(f);
  return result;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 100;
  double lr = 0.1;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  bool shuffle = true;
};

struct TrainResult {
  Model model;
  Vec loss_history;  // mean per-sample loss per epoch
};

// v <- momentum * v + g / batch; w <- w - lr * v.
class SgdMomentum {
 public:
  SgdMomentum(const Model& m, double lr, double momentum)
      : velocity_(ParamGrads::zeros_like(m)), lr_(lr), momentum_(momentum) {}

  void step(Model& model, const ParamGrads& grads, std::size_t batch) {
    const double inv = 1.0 / static_cast<double>(batch);
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
      auto& vw = velocity_.weights[l].data;
      const auto& gw = grads.weights[l].data;
      auto& w = model.weights[l].data;
      for (std::size_t i = 0; i < vw.size(); ++i) {
        vw[i] = momentum_ * vw[i] + gw[i] * inv;
        w[i] -= lr_ * vw[i];
      }
      auto& vb = velocity_.biases[l];
      const auto& gb = grads.biases[l];
      auto& b = model.biases[l];
      for (std::size_t i = 0; i < vb.size(); ++i) {
        vb[i] = momentum_ * vb[i] + gb[i] * inv;
        b[i] -= lr_ * vb[i];
      }
    }
  }

 private:
  ParamGrads velocity_;
  double lr_;
  double momentum_;
};

// Minibatch SGD with momentum over `n` samples. `batch_grad(model, batch, grads)`
// adds the summed per-sample gradients over `batch` into the zeroed `grads` and
// returns the summed loss. Batch indices are passed in ascending order so the
// accumulation order does not depend on the shuffle.
template <typename BatchGradFn>
TrainResult fit(Model model, std::size_t n, const TrainConfig& cfg, BatchGradFn&& batch_grad) {
  if (n == 0) throw ParameterError("training set is empty");
  if (!(cfg.lr >= 0.0)) throw ParameterError("learning rate must be >= 0");
  if (cfg.batch_size == 0) throw ParameterError("batch size must be >= 1");
  model.validate();
  Rng rng(cfg.seed);
  ParamGrads grads = ParamGrads::zeros_like(model);
  SgdMomentum opt(model, cfg.lr, cfg.momentum);
  TrainResult result;
  result.loss_history.reserve(cfg.epochs);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<std::size_t> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::sort(batch.begin(), batch.end());
      grads.set_zero();
      const double batch_loss = batch_grad(static_cast<const Model&>(model),
                                           std::span<const std::size_t>(batch), grads);
      if (!std::isfinite(batch_loss) || !grads.all_finite()) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += batch_loss;
      opt.step(model, grads, batch.size());
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  result.model = std::move(model);
  return result;
}

// Adds the cross-entropy gradient of one sample into `grads` (scaled) and returns its loss.
inline double accumulate_sample(const Model& model, std::span<const double> x, const Label& y,
                                ParamGrads& grads, double scale = 1.0) {
  const ForwardResult f = forward(model, x);
  const Vec target = target_distribution(y, model.output_dim());
  backprop(model, f, logit_gradient(model, f, target), &grads, scale);
  return cross_entropy(f.logits, model.temperature, target);
}

// Cross-entropy training of a softmax classifier at the model's temperature.
// Soft-label samples train against their distributions.
inline TrainResult train_sgd(Model model, std::span<const Sample> samples, const TrainConfig& cfg) {
  require_classifier(model);
  return fit(std::move(model), samples.size(), cfg,
             [&](const Model& m, std::span<const std::size_t> batch, ParamGrads& g) {
               double total = 0.0;
               for (std::size_t i : batch) total += accumulate_sample(m, samples[i].x, samples[i].y, g);
               return total;
             });
}

inline double accuracy(const Model& model, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples)
    if (predict(model, s.x) == hard_label(s.y)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Finite-difference checks

// |a - n| / max(|a|, |n|, floor); 0/0 is 0. The floor sits at the
// central-difference noise level so vanishing components do not dominate.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Max relative error of backward() against central differences over every
// parameter and every input coordinate.
inline double gradient_check(const Model& model, std::span<const double> x, const Label& y, double h) {
  if (!(h > 0.0 && h <= 1e-2)) throw ParameterError("gradient_check step must be in (0, 1e-2]");
  const GradReport rep = backward(model, x, y);
  double worst = 0.0;
  Model probe = model;
  auto central = [&](double& slot) {
    const double saved = slot;
    slot = saved + h;
    const double up = loss(probe, x, y);
    slot = saved - h;
    const double down = loss(probe, x, y);
    slot = saved;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    for (std::size_t i = 0; i < probe.weights[l].data.size(); ++i) {
      worst = std::max(worst, relative_error(rep.params.weights[l].data[i], central(probe.weights[l].data[i])));
    }
    for (std::size_t i = 0; i < probe.biases[l].size(); ++i) {
      worst = std::max(worst, relative_error(rep.params.biases[l][i], central(probe.biases[l][i])));
    }
  }
  Vec xp(x.begin(), x.end());
  for (std::size_t i = 0; i < xp.size(); ++i) {
    const double saved = xp[i];
    xp[i] = saved + h;
    const double up = loss(model, xp, y);
    xp[i] = saved - h;
    const double down = loss(model, xp, y);
    xp[i] = saved;
    worst = std::max(worst, relative_error(rep.input_grad[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

// Max relative error of input_jacobian() against central differences of F.
inline double jacobian_check(const Model& model, std::span<const double> x, double h,
                             JacobianOutput out = JacobianOutput::probabilities) {
  const Matrix j = input_jacobian(model, x, out);
  auto eval = [&](std::span<const double> v) {
    const ForwardResult f = forward(model, v);
    return out == JacobianOutput::probabilities ? softmax_t(f.logits, 1.0) : f.logits;
  };
  double worst = 0.0;
  Vec xp(x.begin(), x.end());
  for (std::size_t i = 0; i < xp.size(); ++i) {
    const double saved = xp[i];
    xp[i] = saved + h;
    const Vec up = eval(xp);
    xp[i] = saved - h;
    const Vec down = eval(xp);
    xp[i] = saved;
    for (std::size_t c = 0; c < j.rows; ++c) {
      worst = std::max(worst, relative_error(j(c, i), (up[c] - down[c]) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace advlab
