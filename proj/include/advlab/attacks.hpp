#pragma once

// Gradient-based evasion attacks: FGSM, BIM, iterative least-likely class,
// momentum-iterative FGSM and the Jacobian saliency map attack.
//
// Untargeted attacks ascend the cross-entropy of the true label; targeted ones
// descend the cross-entropy of the target label. sign(0) = 0 throughout, so a
// zero budget or a dead gradient coordinate leaves the input untouched.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "advlab/errors.hpp"
#include "advlab/matrix.hpp"
#include "advlab/nn.hpp"
#include "advlab/tolerances.hpp"

namespace advlab {

struct AttackConfig {
  double epsilon = 0.1;        // L-inf budget
  double alpha = 0.01;         // per-iteration step
  std::size_t iterations = 10;
  double momentum_decay = 1.0;
  std::optional<std::size_t> target;
  double theta = 1.0;          // JSMA per-feature perturbation
  double upsilon = 0.1429;     // JSMA max fraction of modified features
  std::uint64_t seed = 0;

  void validate() const {
    if (!(epsilon >= 0.0)) throw ParameterError("epsilon must be >= 0");
    if (!(alpha > 0.0)) throw ParameterError("alpha must be > 0");
    if (iterations < 1) throw ParameterError("iterations must be >= 1");
    if (!(momentum_decay >= 0.0 && momentum_decay <= 1.0)) throw ParameterError("momentum decay must be in [0,1]");
    if (!(theta > 0.0 && theta <= 1.0)) throw ParameterError("theta must be in (0,1]");
    if (!(upsilon >= 0.0 && upsilon <= 1.0)) throw ParameterError("upsilon must be in [0,1]");
  }

  // Iterative attacks expect alpha <= epsilon; callers may warn on this.
  bool alpha_exceeds_epsilon() const { return alpha > epsilon; }
};

struct AttackResult {
  Vec x_adv;
  bool success = false;
  std::size_t predicted_before = 0;
  std::size_t predicted_after = 0;
  double linf_norm = 0.0;
  double l1_norm = 0.0;
  double l2_norm = 0.0;
  double modified_fraction = 0.0;
  std::size_t queries = 0;          // model evaluations (forward or forward+backward)
  std::size_t iterations_used = 0;
  std::optional<std::size_t> target;
  std::string failure_reason;
};

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Perturbation growth of a linear unit: eta = eps * sign(w) raises the
// activation by w . eta, which equals eps * m * n (m = mean |w_i|, n = dim w).
struct GrowthBound {
  Vec eta;
  double activation_delta = 0.0;
  double bound = 0.0;
};

inline GrowthBound perturbation_growth_bound(std::span<const double> w, double epsilon) {
  if (!(epsilon >= 0.0)) throw ParameterError("epsilon must be >= 0");
  GrowthBound g;
  g.eta.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) g.eta[i] = epsilon * sign(w[i]);
  g.activation_delta = dot(w, g.eta);
  const double n = static_cast<double>(w.size());
  const double m = w.empty() ? 0.0 : norm_l1(w) / n;
  g.bound = epsilon * m * n;
  return g;
}

namespace detail {

// Clip_{x,eps}: intersection of the eps L-inf ball around x with [0,1].
inline double clip_box(double v, double x0, double epsilon) {
  const double lo = std::max(0.0, x0 - epsilon);
  const double hi = std::min(1.0, x0 + epsilon);
  return std::clamp(v, lo, hi);
}

inline void check_box(std::span<const double> x_adv, std::span<const double> x, double epsilon) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x_adv[i] >= 0.0 && x_adv[i] <= 1.0) ||
        std::abs(x_adv[i] - x[i]) > epsilon + Tolerances::box_slack) {
      throw NumericError("attack iterate left the epsilon box at coordinate " + std::to_string(i));
    }
  }
}

inline void check_input(const Model& model, std::span<const double> x) {
  require_classifier(model);
  if (x.size() != model.input_dim()) throw ShapeError("sample dimension does not match model input");
  for (double v : x)
    if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("sample features must lie in [0,1]");
}

inline void finish(const Model& model, std::span<const double> x, std::size_t true_label, AttackResult& r) {
  const ForwardResult f = forward(model, r.x_adv);
  ++r.queries;
  r.predicted_after = argmax(f.output);
  r.success = r.target ? r.predicted_after == *r.target : r.predicted_after != true_label;
  Vec delta(x.size());
  std::size_t changed = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    delta[i] = r.x_adv[i] - x[i];
    if (delta[i] != 0.0) ++changed;
  }
  r.linf_norm = norm_linf(delta);
  r.l1_norm = norm_l1(delta);
  r.l2_norm = norm_l2(delta);
  r.modified_fraction = x.empty() ? 0.0 : static_cast<double>(changed) / static_cast<double>(x.size());
}

// Shared loop for BIM / ILLC / MI-FGSM. `target` switches to descent on the
// target label. When `momentum` is set the step direction is the accumulated
// L1-normalised gradient.
struct IterativeTrace {
  std::vector<Vec> normalized_gradients;
  std::vector<Vec> momentum;
};

inline AttackResult iterate_sign_steps(const Model& model, const Sample& sample, const AttackConfig& cfg,
                                       std::optional<std::size_t> target, std::optional<double> momentum,
                                       IterativeTrace* trace) {
  cfg.validate();
  check_input(model, sample.x);
  const std::size_t true_label = hard_label(sample.y);
  const Label loss_label = target ? Label{*target} : Label{true_label};
  const double direction = target ? -1.0 : 1.0;
  const std::span<const double> x0 = sample.x;
  AttackResult r;
  r.target = target;
  r.x_adv = sample.x;
  Vec g(x0.size(), 0.0);
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    ForwardResult f;
    const Vec grad = input_gradient(model, r.x_adv, loss_label, &f);
    ++r.queries;
    if (t == 0) r.predicted_before = argmax(f.output);
    const Vec* step = &grad;
    if (momentum) {
      const double n1 = norm_l1(grad);
      Vec normalized(grad.size(), 0.0);
      if (n1 > 0.0)
        for (std::size_t i = 0; i < grad.size(); ++i) normalized[i] = grad[i] / n1;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = *momentum * g[i] + normalized[i];
      if (trace != nullptr) {
        trace->normalized_gradients.push_back(normalized);
        trace->momentum.push_back(g);
      }
      step = &g;
    }
    for (std::size_t i = 0; i < x0.size(); ++i) {
      r.x_adv[i] = clip_box(r.x_adv[i] + direction * (cfg.alpha * sign((*step)[i])), x0[i], cfg.epsilon);
    }
    check_box(r.x_adv, x0, cfg.epsilon);
    r.iterations_used = t + 1;
  }
  finish(model, x0, true_label, r);
  return r;
}

}  // namespace detail

// x_adv = clamp01(x + eps * sign(grad_x J(x, y))), one gradient evaluation.
inline AttackResult fgsm(const Model& model, const Sample& sample, double epsilon) {
  if (!(epsilon >= 0.0)) throw ParameterError("epsilon must be >= 0");
  detail::check_input(model, sample.x);
  const std::size_t y = hard_label(sample.y);
  ForwardResult f;
  const Vec grad = input_gradient(model, sample.x, Label{y}, &f);
  AttackResult r;
  r.queries = 1;
  r.iterations_used = 1;
  r.predicted_before = argmax(f.output);
  r.x_adv = sample.x;
  for (std::size_t i = 0; i < grad.size(); ++i) r.x_adv[i] = clamp01(sample.x[i] + epsilon * sign(grad[i]));
  detail::finish(model, sample.x, y, r);
  return r;
}

// Basic iterative method; targeted when cfg.target is set.
inline AttackResult bim(const Model& model, const Sample& sample, const AttackConfig& cfg) {
  return detail::iterate_sign_steps(model, sample, cfg, cfg.target, std::nullopt, nullptr);
}

// Iterative least-likely class: targets argmin of the clean probabilities.
inline AttackResult illc(const Model& model, const Sample& sample, const AttackConfig& cfg) {
  detail::check_input(model, sample.x);
  const std::size_t least_likely = argmin(forward(model, sample.x).output);
  AttackResult r = detail::iterate_sign_steps(model, sample, cfg, least_likely, std::nullopt, nullptr);
  ++r.queries;
  return r;
}

using MomentumTrace = detail::IterativeTrace;

// Momentum iterative FGSM. Both the gradient and its L1 norm are evaluated at
// the current iterate. A zero gradient contributes nothing; the momentum term
// still carries the step.
inline AttackResult mifgsm(const Model& model, const Sample& sample, const AttackConfig& cfg,
                           MomentumTrace* trace = nullptr) {
  return detail::iterate_sign_steps(model, sample, cfg, cfg.target, cfg.momentum_decay, trace);
}

// ---------------------------------------------------------------------------
// JSMA

enum class SaliencyDirection { increase, decrease };

// Single-feature saliency map over a (classes x features) Jacobian.
inline Vec jsma_saliency(const Matrix& jacobian, std::size_t target, SaliencyDirection direction) {
  if (target >= jacobian.rows) throw ShapeError("target class outside Jacobian rows");
  Vec s(jacobian.cols, 0.0);
  for (std::size_t i = 0; i < jacobian.cols; ++i) {
    const double jt = jacobian(target, i);
    double others = 0.0;
    for (std::size_t j = 0; j < jacobian.rows; ++j)
      if (j != target) others += jacobian(j, i);
    if (direction == SaliencyDirection::increase) {
      s[i] = (jt < 0.0 || others > 0.0) ? 0.0 : jt * std::abs(others);
    } else {
      s[i] = (jt > 0.0 || others < 0.0) ? 0.0 : std::abs(jt) * others;
    }
  }
  return s;
}

// Targeted two-feature saliency attack (increase direction). Each iteration
// picks the pair (p, q) from the search domain maximising
//   (J_pt + J_qt) * |sum_{j != t} (J_pj + J_qj)|
// subject to J_pt + J_qt > 0 and sum_{j != t}(J_pj + J_qj) < 0, raises both by
// theta inside Clip_{x,eps}, and drops features that reach their ceiling
// min(1, x_i + eps) from the domain. At most floor(upsilon * n) features are
// ever modified.
inline AttackResult jsma(const Model& model, const Sample& sample, std::size_t target, const AttackConfig& cfg) {
  cfg.validate();
  detail::check_input(model, sample.x);
  const std::size_t n = sample.x.size();
  const std::size_t classes = model.output_dim();
  if (target >= classes) throw ParameterError("JSMA target outside class range");
  const std::size_t true_label = hard_label(sample.y);
  const auto budget = static_cast<std::size_t>(std::floor(cfg.upsilon * static_cast<double>(n) + 1e-9));

  AttackResult r;
  r.target = target;
  r.x_adv = sample.x;
  std::vector<char> in_domain(n), modified(n, 0);
  Vec ceiling(n);
  for (std::size_t i = 0; i < n; ++i) {
    ceiling[i] = std::min(1.0, sample.x[i] + cfg.epsilon);
    in_domain[i] = sample.x[i] < ceiling[i];
  }
  std::size_t modified_count = 0;

  for (std::size_t iter = 0;; ++iter) {
    ForwardResult f;
    const Matrix jac = input_jacobian(model, r.x_adv, JacobianOutput::probabilities, &f);
    ++r.queries;
    const std::size_t pred = argmax(f.output);
    if (iter == 0) r.predicted_before = pred;
    if (pred == target) break;

    Vec alpha(n), beta(n);
    for (std::size_t i = 0; i < n; ++i) {
      alpha[i] = jac(target, i);
      double others = 0.0;
      for (std::size_t j = 0; j < classes; ++j)
        if (j != target) others += jac(j, i);
      beta[i] = others;
    }
    double best = 0.0;
    std::size_t bp = n, bq = n;
    for (std::size_t p = 0; p < n; ++p) {
      if (!in_domain[p]) continue;
      for (std::size_t q = p + 1; q < n; ++q) {
        if (!in_domain[q]) continue;
        const double a = alpha[p] + alpha[q];
        const double b = beta[p] + beta[q];
        if (a > 0.0 && b < 0.0) {
          const double score = a * std::abs(b);
          if (score > best) {
            best = score;
            bp = p;
            bq = q;
          }
        }
      }
    }
    if (bp == n) {
      r.failure_reason = "saliency-exhausted";
      break;
    }
    const std::size_t extra = std::size_t{modified[bp] == 0} + std::size_t{modified[bq] == 0};
    if (modified_count + extra > budget) {
      r.failure_reason = "budget-exhausted";
      break;
    }
    for (std::size_t idx : {bp, bq}) {
      r.x_adv[idx] = detail::clip_box(r.x_adv[idx] + cfg.theta, sample.x[idx], cfg.epsilon);
      if (!modified[idx]) {
        modified[idx] = 1;
        ++modified_count;
      }
      if (r.x_adv[idx] >= ceiling[idx]) in_domain[idx] = 0;
    }
    r.iterations_used = iter + 1;
  }
  detail::finish(model, sample.x, true_label, r);
  if (r.success) r.failure_reason.clear();
  return r;
}

}  // namespace advlab
