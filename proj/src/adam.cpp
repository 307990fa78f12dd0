#include "steve/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace steve {

AdamState make_adam_state(const MlpParams& params, AdamConfig config) {
  if (!(config.learning_rate > 0.0)) {
    throw std::invalid_argument("adam: learning rate must be positive");
  }
  AdamState state;
  state.config = config;
  state.first_moment = params.zeros_like();
  state.second_moment = params.zeros_like();
  return state;
}

AdamReport adam_step(AdamState& state, MlpParams& params, const MlpParams& grads) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment) ||
      !params.same_shape(state.second_moment)) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  AdamReport report;
  for (const auto& layer : grads.layers) {
    report.non_finite_entries += static_cast<std::size_t>(
        (!layer.weight.array().isFinite()).count() + (!layer.bias.array().isFinite()).count());
  }
  if (report.non_finite_entries > 0) return report;

  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double step_size = c.learning_rate * std::sqrt(1.0 - std::pow(c.beta2, t)) /
                           (1.0 - std::pow(c.beta1, t));
  // Folding the bias correction into the step size requires rescaling epsilon
  // to keep the update identical to the textbook form.
  const double eps_hat = c.epsilon * std::sqrt(1.0 - std::pow(c.beta2, t));

  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= step_size * m.array() / (v.array().sqrt() + eps_hat);
  };
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    update(params.layers[k].weight, state.first_moment.layers[k].weight,
           state.second_moment.layers[k].weight, grads.layers[k].weight);
    update(params.layers[k].bias, state.first_moment.layers[k].bias,
           state.second_moment.layers[k].bias, grads.layers[k].bias);
  }
  report.applied = true;
  return report;
}

}  // namespace steve
