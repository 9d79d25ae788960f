#pragma once

// Training-time defenses: adversarial training and defensive distillation.
// Input-space defenses live in squeeze.hpp and svd.hpp.

#include <cstdint>
#include <string>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/nn.hpp"

namespace advlab {

enum class InnerAttack { fgsm, bim };

struct AdversarialTrainConfig {
  InnerAttack attack = InnerAttack::fgsm;
  AttackConfig attack_config;  // epsilon doubles as the L-inf radius of the inner maximisation
  double mix_ratio = 0.5;
  TrainConfig train;
};

// Minibatch loss = (1 - r) * J(clean) + r * J(adversarial), where adversarial
// copies are regenerated from the current weights at every step. A sample
// whose attack throws contributes its clean copy instead.
inline TrainResult adversarial_train(Model model, std::span<const Sample> samples, const AdversarialTrainConfig& cfg) {
  require_classifier(model);
  if (!(cfg.mix_ratio >= 0.0 && cfg.mix_ratio <= 1.0)) throw ParameterError("mix_ratio must be in [0,1]");
  const double r = cfg.mix_ratio;
  return fit(std::move(model), samples.size(), cfg.train,
             [&](const Model& m, std::span<const std::size_t> batch, ParamGrads& g) {
               double total = 0.0;
               for (std::size_t i : batch) total += (1.0 - r) * accumulate_sample(m, samples[i].x, samples[i].y, g, 1.0 - r);
               if (r == 0.0) return total;
               for (std::size_t i : batch) {
                 const Sample hard{samples[i].x, hard_label(samples[i].y)};
                 Vec x_adv;
                 try {
                   x_adv = cfg.attack == InnerAttack::fgsm ? fgsm(m, hard, cfg.attack_config.epsilon).x_adv
                                                           : bim(m, hard, cfg.attack_config).x_adv;
                 } catch (const Error&) {
                   x_adv = samples[i].x;
                 }
                 total += r * accumulate_sample(m, x_adv, samples[i].y, g, r);
               }
               return total;
             });
}

struct DistillConfig {
  double temperature = 100.0;
  std::vector<std::size_t> hidden = {32, 32};
  Activation activation = Activation::relu;
  TrainConfig teacher{.epochs = 600, .lr = 1.0, .batch_size = 32, .momentum = 0.9, .seed = 1, .shuffle = true};
  TrainConfig student{.epochs = 600, .lr = 1.0, .batch_size = 32, .momentum = 0.9, .seed = 2, .shuffle = true};
};

struct DistillResult {
  Model teacher;
  Model student;
  Vec teacher_loss;
  Vec student_loss;
};

inline std::vector<std::size_t> classifier_dims(std::size_t inputs, const std::vector<std::size_t>& hidden,
                                                std::size_t classes) {
  std::vector<std::size_t> dims{inputs};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);
  return dims;
}

// Teacher trained at temperature T on hard labels; its softmax_T outputs on the
// training set become soft labels for a student of identical architecture,
// also trained at T. Both are returned with T reset to 1.
inline DistillResult distill(const Dataset& data, const DistillConfig& cfg, std::uint64_t seed) {
  if (!(cfg.temperature > 1.0)) throw ParameterError("distillation temperature must be > 1");
  if (data.empty()) throw ParameterError("distillation dataset is empty");
  const auto dims = classifier_dims(data.feature_dim, cfg.hidden, data.class_count);
  Rng init(seed);
  Model teacher = make_model(dims, cfg.activation, init, OutputHead::softmax, cfg.temperature);
  Model student = make_model(dims, cfg.activation, init, OutputHead::softmax, cfg.temperature);

  DistillResult out;
  TrainResult t = train_sgd(std::move(teacher), data.samples, cfg.teacher);
  out.teacher_loss = std::move(t.loss_history);

  std::vector<Sample> soft;
  soft.reserve(data.size());
  for (const auto& s : data.samples) {
    Vec q = forward(t.model, s.x).output;
    // Renormalise to an exact distribution.
    double sum = 0.0;
    for (double v : q) sum += v;
    for (double& v : q) v /= sum;
    soft.push_back({s.x, std::move(q)});
  }
  TrainResult st = train_sgd(std::move(student), soft, cfg.student);
  out.student_loss = std::move(st.loss_history);

  out.teacher = std::move(t.model);
  out.student = std::move(st.model);
  out.teacher.temperature = 1.0;
  out.student.temperature = 1.0;
  return out;
}

}  // namespace advlab
