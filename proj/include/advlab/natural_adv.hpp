#pragma once

// Latent-space ("natural") adversaries at toy scale: a weight-clipped WGAN, an
// inverter trained on reconstruction + divergence errors, and the two
// latent-space searches (expanding rings, and hybrid shrinking).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "advlab/errors.hpp"
#include "advlab/matrix.hpp"
#include "advlab/nn.hpp"
#include "advlab/rng.hpp"

namespace advlab {

struct GanBundle {
  Model generator;  // z_dim -> data_dim, identity head
  Model critic;     // data_dim -> 1, identity head
  Model inverter;   // data_dim -> z_dim, identity head
  std::size_t z_dim = 2;
  double clip_c = 0.05;
};

struct WganConfig {
  std::size_t z_dim = 2;
  std::vector<std::size_t> generator_hidden = {32, 32};
  std::vector<std::size_t> critic_hidden = {32, 32};
  Activation activation = Activation::relu;
  std::size_t n_critic = 5;
  double clip_c = 0.05;
  std::size_t steps = 2000;   // generator updates
  double lr = 0.05;
  double momentum = 0.5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
};

struct WganResult {
  Model generator;
  Model critic;
  Vec critic_objective;  // E[C(x)] - E[C(G(z))] after each generator update
};

inline Vec sample_latent(Rng& rng, std::size_t z_dim) {
  Vec z(z_dim);
  for (double& v : z) v = rng.normal();
  return z;
}

inline void clip_parameters(Model& m, double c) {
  for (auto& w : m.weights)
    for (double& v : w.data) v = std::clamp(v, -c, c);
  for (auto& b : m.biases)
    for (double& v : b) v = std::clamp(v, -c, c);
}

inline double max_abs_parameter(const Model& m) {
  double mx = 0.0;
  for (const auto& w : m.weights) mx = std::max(mx, norm_linf(w.data));
  for (const auto& b : m.biases) mx = std::max(mx, norm_linf(b));
  return mx;
}

inline double scalar_output(const Model& m, std::span<const double> x) { return forward(m, x).output[0]; }

// Wasserstein GAN with weight clipping. Each generator update follows n_critic
// critic updates that ascend E[C(x)] - E[C(G(z))]; every critic parameter is
// clamped to [-clip_c, clip_c] after each critic update. `on_critic_step`
// observes the critic after every clamp.
inline WganResult wgan_train(std::span<const Vec> data, const WganConfig& cfg,
                             const std::function<void(std::size_t, const Model&)>& on_critic_step = {}) {
  if (data.empty()) throw ParameterError("WGAN dataset is empty");
  if (!(cfg.clip_c > 0.0)) throw ParameterError("clip_c must be > 0");
  if (cfg.batch_size == 0 || cfg.n_critic == 0) throw ParameterError("WGAN batch size and n_critic must be >= 1");
  const std::size_t dim = data.front().size();
  Rng rng(cfg.seed);
  std::vector<std::size_t> gdims{cfg.z_dim};
  gdims.insert(gdims.end(), cfg.generator_hidden.begin(), cfg.generator_hidden.end());
  gdims.push_back(dim);
  std::vector<std::size_t> cdims{dim};
  cdims.insert(cdims.end(), cfg.critic_hidden.begin(), cfg.critic_hidden.end());
  cdims.push_back(1);
  WganResult out;
  out.generator = make_model(gdims, cfg.activation, rng, OutputHead::identity);
  out.critic = make_model(cdims, cfg.activation, rng, OutputHead::identity);
  clip_parameters(out.critic, cfg.clip_c);
  Model& g = out.generator;
  Model& c = out.critic;
  SgdMomentum g_opt(g, cfg.lr, cfg.momentum);
  SgdMomentum c_opt(c, cfg.lr, cfg.momentum);
  ParamGrads gg = ParamGrads::zeros_like(g);
  ParamGrads cg = ParamGrads::zeros_like(c);
  const std::size_t m = cfg.batch_size;
  const double inv_m = 1.0 / static_cast<double>(m);
  std::size_t critic_steps = 0;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double objective = 0.0;
    for (std::size_t k = 0; k < cfg.n_critic; ++k) {
      cg.set_zero();
      objective = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const Vec& x = data[rng.uniform_index(data.size())];
        const ForwardResult fr = forward(c, x);
        backprop(c, fr, Vec{-1.0}, &cg);  // minimise -C(x)
        const Vec fake = forward(g, sample_latent(rng, cfg.z_dim)).output;
        const ForwardResult ff = forward(c, fake);
        backprop(c, ff, Vec{1.0}, &cg);   // minimise +C(G(z))
        objective += (fr.output[0] - ff.output[0]) * inv_m;
      }
      if (!std::isfinite(objective) || !cg.all_finite()) {
        throw DivergenceError("WGAN critic diverged at step " + std::to_string(step));
      }
      c_opt.step(c, cg, m);
      clip_parameters(c, cfg.clip_c);
      if (on_critic_step) on_critic_step(critic_steps, c);
      ++critic_steps;
    }
    gg.set_zero();
    for (std::size_t i = 0; i < m; ++i) {
      const ForwardResult fg = forward(g, sample_latent(rng, cfg.z_dim));
      const ForwardResult fc = forward(c, fg.output);
      Vec dx = backprop(c, fc, Vec{-1.0});  // minimise -C(G(z))
      backprop(g, fg, std::move(dx), &gg);
    }
    if (!gg.all_finite()) throw DivergenceError("WGAN generator diverged at step " + std::to_string(step));
    g_opt.step(g, gg, m);
    out.critic_objective.push_back(objective);
  }
  return out;
}

struct InverterConfig {
  std::vector<std::size_t> hidden = {32, 32};
  Activation activation = Activation::relu;
  double lambda = 1.0;
  std::size_t steps = 2000;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 2;
};

struct InverterErrors {
  double reconstruction = 0.0;  // mean ||G(I(x)) - x||
  double divergence = 0.0;      // mean ||z - I(G(z))||
};

struct InverterResult {
  Model inverter;
  InverterErrors initial;
  InverterErrors final;
};

inline InverterErrors inverter_errors(const Model& g, const Model& inv, std::span<const Vec> data,
                                      std::span<const Vec> latents) {
  InverterErrors e;
  for (const auto& x : data) e.reconstruction += std::sqrt(squared_distance(forward(g, forward(inv, x).output).output, x));
  for (const auto& z : latents) e.divergence += std::sqrt(squared_distance(forward(inv, forward(g, z).output).output, z));
  if (!data.empty()) e.reconstruction /= static_cast<double>(data.size());
  if (!latents.empty()) e.divergence /= static_cast<double>(latents.size());
  return e;
}

// Minimises E_x ||G(I(x)) - x||^2 + lambda * E_z ||z - I(G(z))||^2 over the
// inverter's parameters with G frozen.
inline InverterResult inverter_train(const Model& generator, std::span<const Vec> data, const InverterConfig& cfg) {
  if (data.empty()) throw ParameterError("inverter dataset is empty");
  if (!(cfg.lambda >= 0.0)) throw ParameterError("lambda must be >= 0");
  const std::size_t z_dim = generator.input_dim();
  const std::size_t dim = generator.output_dim();
  Rng rng(cfg.seed);
  std::vector<std::size_t> dims{dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(z_dim);
  Model inv = make_model(dims, cfg.activation, rng, OutputHead::identity);

  std::vector<Vec> probe_z;
  for (std::size_t i = 0; i < 256; ++i) probe_z.push_back(sample_latent(rng, z_dim));
  InverterResult out;
  out.initial = inverter_errors(generator, inv, data, probe_z);

  SgdMomentum opt(inv, cfg.lr, cfg.momentum);
  ParamGrads grads = ParamGrads::zeros_like(inv);
  const std::size_t m = cfg.batch_size;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    grads.set_zero();
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const Vec& x = data[rng.uniform_index(data.size())];
      const ForwardResult fi = forward(inv, x);
      const ForwardResult fg = forward(generator, fi.output);
      Vec up(dim);
      for (std::size_t j = 0; j < dim; ++j) up[j] = 2.0 * (fg.output[j] - x[j]);
      loss += squared_distance(fg.output, x);
      Vec dz = backprop(generator, fg, std::move(up));
      backprop(inv, fi, std::move(dz), &grads);

      const Vec z = sample_latent(rng, z_dim);
      const Vec xg = forward(generator, z).output;
      const ForwardResult fz = forward(inv, xg);
      Vec upz(z_dim);
      for (std::size_t j = 0; j < z_dim; ++j) upz[j] = 2.0 * cfg.lambda * (fz.output[j] - z[j]);
      loss += cfg.lambda * squared_distance(fz.output, z);
      if (cfg.lambda > 0.0) backprop(inv, fz, std::move(upz), &grads);
    }
    if (!std::isfinite(loss) || !grads.all_finite()) {
      throw DivergenceError("inverter training diverged at step " + std::to_string(step));
    }
    opt.step(inv, grads, m);
  }
  out.final = inverter_errors(generator, inv, data, probe_z);
  out.inverter = std::move(inv);
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct GanLossReport {
  double gan_value = 0.0;            // E[log s(C(x))] + E[log(1 - s(C(G(z))))], s = logistic
  double critic_objective = 0.0;     // E[C(x)] - E[C(G(z))]
  double generator_objective = 0.0;  // E[C(G(z))]
};

namespace detail {
// log(1 + e^v) without overflow.
inline double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
}  // namespace detail

inline GanLossReport gan_loss_eval(const Model& g, const Model& c, std::span<const Vec> data_batch,
                                   std::span<const Vec> z_batch) {
  if (data_batch.empty() || z_batch.empty()) throw ParameterError("gan_loss_eval needs non-empty batches");
  GanLossReport r;
  double log_real = 0.0, real = 0.0;
  for (const auto& x : data_batch) {
    const double v = scalar_output(c, x);
    real += v;
    log_real -= detail::softplus(-v);  // log s(v)
  }
  double log_fake = 0.0, fake = 0.0;
  for (const auto& z : z_batch) {
    const double v = scalar_output(c, forward(g, z).output);
    fake += v;
    log_fake -= detail::softplus(v);   // log(1 - s(v))
  }
  const double nr = static_cast<double>(data_batch.size()), nf = static_cast<double>(z_batch.size());
  r.gan_value = log_real / nr + log_fake / nf;
  r.critic_objective = real / nr - fake / nf;
  r.generator_objective = fake / nf;
  return r;
}

// ---------------------------------------------------------------------------
// Latent searches

struct SearchTraceRow {
  std::size_t iteration = 0;
  double radius = 0.0;
  std::size_t candidate_count = 0;
  double best_delta_z = std::numeric_limits<double>::infinity();
  bool success = false;
};

struct LatentSearchResult {
  Vec z_star;
  Vec x_star;  // G(z_star)
  double delta_z_norm = std::numeric_limits<double>::infinity();
  std::size_t classifier_queries = 0;
  bool success = false;
  std::vector<SearchTraceRow> trace;
};

using LabelFn = std::function<std::size_t(std::span<const double>)>;

inline LabelFn model_classifier(const Model& m) {
  return [&m](std::span<const double> x) { return predict(m, x); };
}

struct StochasticSearchConfig {
  double delta_r = 0.05;
  std::size_t n_per_ring = 32;
  double max_radius = 2.0;
  std::uint64_t seed = 0;
};

struct HybridSearchConfig {
  double r_hi = 2.0;
  std::size_t n_per_iter = 32;
  std::size_t iters = 8;
  double min_gap = 0.05;  // stop once the bracket (lo, r] is narrower than this
  std::uint64_t seed = 0;
};

namespace detail {

// Uniform draw in the annulus lo < |d| <= hi around z0.
inline Vec sample_annulus(Rng& rng, std::span<const double> z0, double lo, double hi) {
  const std::size_t d = z0.size();
  Vec dir(d);
  double n = 0.0;
  while (n == 0.0) {
    for (double& v : dir) v = rng.normal();
    n = norm_l2(dir);
  }
  const double dd = static_cast<double>(d);
  const double lo_d = std::pow(lo, dd), hi_d = std::pow(hi, dd);
  const double rho = std::pow(lo_d + rng.uniform() * (hi_d - lo_d), 1.0 / dd);
  Vec z(d);
  for (std::size_t i = 0; i < d; ++i) z[i] = z0[i] + rho * dir[i] / n;
  return z;
}

struct SearchState {
  const Model& g;
  const LabelFn& classify;
  Vec z0;
  std::size_t reference = 0;
  LatentSearchResult result;

  std::size_t query(std::span<const double> x) {
    ++result.classifier_queries;
    return classify(x);
  }

  // Evaluates candidates and keeps the closest label-changing one.
  bool consider(const std::vector<Vec>& candidates) {
    bool found = false;
    for (const auto& z : candidates) {
      const Vec x = forward(g, z).output;
      if (query(x) == reference) continue;
      const double dist = std::sqrt(squared_distance(z, z0));
      if (dist < result.delta_z_norm) {
        result.delta_z_norm = dist;
        result.z_star = z;
        result.x_star = x;
        result.success = true;
        found = true;
      }
    }
    return found;
  }
};

inline bool start_search(SearchState& s, const Model& inverter, std::span<const double> x) {
  s.reference = s.query(x);
  s.z0 = forward(inverter, x).output;
  const bool hit = s.consider({s.z0});
  s.result.trace.push_back({0, 0.0, 1, s.result.delta_z_norm, hit});
  return hit;
}

}  // namespace detail

// Expanding rings: samples n_per_ring points uniformly in (r, r + delta_r]
// around z0 = I(x), growing r from 0 to max_radius, and stops at the first
// ring containing a label change (keeping that ring's closest hit).
inline LatentSearchResult iterative_stochastic_search(const Model& g, const Model& inverter, const LabelFn& classify,
                                                      std::span<const double> x, const StochasticSearchConfig& cfg) {
  if (!(cfg.delta_r > 0.0)) throw ParameterError("delta_r must be > 0");
  detail::SearchState s{g, classify, {}, 0, {}};
  if (detail::start_search(s, inverter, x)) return s.result;
  Rng rng(cfg.seed);
  std::size_t ring = 1;
  for (double lo = 0.0; lo + 1e-12 < cfg.max_radius; lo += cfg.delta_r, ++ring) {
    const double hi = lo + cfg.delta_r;
    std::vector<Vec> cands;
    for (std::size_t i = 0; i < cfg.n_per_ring; ++i) cands.push_back(detail::sample_annulus(rng, s.z0, lo, hi));
    const bool hit = s.consider(cands);
    s.result.trace.push_back({ring, hi, cands.size(), s.result.delta_z_norm, hit});
    if (hit) break;
  }
  return s.result;
}

// Hybrid shrinking: samples within (lo, r] with r starting at r_hi. A hit
// shrinks r to the distance of the closest hit; a miss after the first hit
// raises lo halfway towards r. Stops after `iters` rounds or once r - lo < min_gap.
inline LatentSearchResult hybrid_shrinking_search(const Model& g, const Model& inverter, const LabelFn& classify,
                                                  std::span<const double> x, const HybridSearchConfig& cfg) {
  if (!(cfg.r_hi > 0.0)) throw ParameterError("r_hi must be > 0");
  detail::SearchState s{g, classify, {}, 0, {}};
  if (detail::start_search(s, inverter, x)) return s.result;
  Rng rng(cfg.seed);
  double lo = 0.0, r = cfg.r_hi;
  for (std::size_t it = 1; it <= cfg.iters; ++it) {
    std::vector<Vec> cands;
    for (std::size_t i = 0; i < cfg.n_per_iter; ++i) cands.push_back(detail::sample_annulus(rng, s.z0, lo, r));
    const bool hit = s.consider(cands);
    if (hit) {
      r = s.result.delta_z_norm;
    } else if (s.result.success) {
      lo += 0.5 * (r - lo);
    }
    s.result.trace.push_back({it, r, cands.size(), s.result.delta_z_norm, hit});
    if (s.result.success && r - lo < cfg.min_gap) break;
  }
  return s.result;
}

}  // namespace advlab
