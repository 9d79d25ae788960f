#pragma once

namespace advlab {

// Every numeric tolerance used by library code lives here.
struct Tolerances {
  static constexpr double prob_sum = 1e-9;         // softmax outputs sum to 1 within this
  static constexpr double soft_label_sum = 1e-9;   // soft targets sum to 1 within this
  static constexpr double log_clamp = 1e-12;       // floor for log() arguments in losses
  static constexpr double jacobi_threshold = 1e-12;
  static constexpr int jacobi_max_sweeps = 100;
  static constexpr double svd_residual = 1e-8;     // relative reconstruction bound
  static constexpr double box_slack = 1e-12;       // L-inf budget slack for attacks
};

}  // namespace advlab
