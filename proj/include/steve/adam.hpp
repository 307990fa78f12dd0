#ifndef STEVE_ADAM_HPP
#define STEVE_ADAM_HPP

#include <cstddef>
#include <cstdint>

#include "steve/mlp.hpp"

namespace steve {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  MlpParams first_moment;
  MlpParams second_moment;
  std::int64_t step = 0;
};

AdamState make_adam_state(const MlpParams& params, AdamConfig config = {});

struct AdamReport {
  bool applied = false;
  std::size_t non_finite_entries = 0;
};

// Bias-corrected Adam update. A gradient with any non-finite entry is
// rejected: parameters, moments and the step counter are left untouched.
// Throws std::invalid_argument on shape mismatch.
AdamReport adam_step(AdamState& state, MlpParams& params, const MlpParams& grads);

}  // namespace steve

#endif  // STEVE_ADAM_HPP
