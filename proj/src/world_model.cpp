#include "steve/world_model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace steve {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<int> hidden_sizes(const MlpParams& net) {
  std::vector<int> sizes;
  for (std::size_t k = 0; k + 1 < net.layers.size(); ++k) {
    sizes.push_back(static_cast<int>(net.layers[k].weight.rows()));
  }
  return sizes;
}

void check_batch(const WorldModelShape* shape, const TransitionBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("model loss: empty batch");
  if (shape && (batch.states.rows() != shape->state_dim ||
                batch.actions.rows() != shape->action_dim)) {
    throw std::invalid_argument("model loss: batch does not match model shape");
  }
}

}  // namespace

DynamicsModel make_dynamics_model(const WorldModelShape& shape, Rng& rng) {
  DynamicsModel model;
  model.transition = make_mlp({shape.state_dim + shape.action_dim, shape.transition_hidden,
                               shape.state_dim, Activation::kRelu, Activation::kIdentity},
                              rng);
  model.termination = make_mlp(
      {shape.state_dim, shape.termination_hidden, 1, Activation::kRelu, Activation::kIdentity},
      rng);
  return model;
}

MlpParams make_reward_model(const WorldModelShape& shape, Rng& rng) {
  return make_mlp({2 * shape.state_dim + shape.action_dim, shape.reward_hidden, 1,
                   Activation::kRelu, Activation::kIdentity},
                  rng);
}

WorldModelParams make_world_model(const WorldModelShape& shape, Rng& rng) {
  WorldModelParams model;
  model.dynamics = make_dynamics_model(shape, rng);
  model.reward = make_reward_model(shape, rng);
  return model;
}

Eigen::MatrixXd predict_next_states(const DynamicsModel& model, const Eigen::MatrixXd& states,
                                    const Eigen::MatrixXd& actions) {
  return states + forward_batch(model.transition, stack_rows(states, actions));
}

Eigen::VectorXd predict_termination(const DynamicsModel& model, const Eigen::MatrixXd& states,
                                    double clamp) {
  const Eigen::MatrixXd logits = forward_batch(model.termination, states);
  Eigen::VectorXd probs(logits.cols());
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    probs(i) = std::clamp(sigmoid(logits(0, i)), clamp, 1.0 - clamp);
  }
  return probs;
}

Eigen::VectorXd predict_rewards(const MlpParams& reward, const Eigen::MatrixXd& states,
                                const Eigen::MatrixXd& actions,
                                const Eigen::MatrixXd& next_states) {
  return forward_batch(reward, stack_rows(states, actions, next_states)).row(0).transpose();
}

ModelPrediction predict(const WorldModelParams& model, const Eigen::VectorXd& state,
                        const Eigen::VectorXd& action, double clamp) {
  ModelPrediction out;
  out.next_state = predict_next_states(model.dynamics, state, action).col(0);
  out.termination_probability = predict_termination(model.dynamics, out.next_state, clamp)(0);
  out.reward = predict_rewards(model.reward, state, action, out.next_state)(0);
  return out;
}

ModelLoss dynamics_loss(const DynamicsModel& model, const TransitionBatch& batch, double clamp) {
  check_batch(nullptr, batch);
  const double inv_n = 1.0 / batch.size();

  ForwardCache transition_cache;
  const Eigen::MatrixXd delta =
      forward_batch(model.transition, stack_rows(batch.states, batch.actions), &transition_cache);
  const Eigen::MatrixXd predicted = batch.states + delta;
  const Eigen::MatrixXd residual = predicted - batch.next_states;

  ForwardCache termination_cache;
  const Eigen::MatrixXd logits = forward_batch(model.termination, predicted, &termination_cache);
  Eigen::MatrixXd logit_grad(1, batch.size());
  double cross_entropy = 0.0;
  for (int i = 0; i < batch.size(); ++i) {
    const double raw = sigmoid(logits(0, i));
    const double p = std::clamp(raw, clamp, 1.0 - clamp);
    const double d = batch.dones(i);
    cross_entropy -= d * std::log(p) + (1.0 - d) * std::log(1.0 - p);
    const bool clamped = raw < clamp || raw > 1.0 - clamp;
    logit_grad(0, i) = clamped ? 0.0 : (raw - d) * inv_n;
  }

  ModelLoss loss;
  loss.transition = residual.squaredNorm() * inv_n;
  loss.termination = cross_entropy * inv_n;
  loss.total = loss.transition + loss.termination;

  MlpGradient termination_grad = backward(model.termination, termination_cache, logit_grad);
  const Eigen::MatrixXd delta_grad = 2.0 * inv_n * residual + termination_grad.input;
  MlpGradient transition_grad = backward(model.transition, transition_cache, delta_grad);
  loss.grads.dynamics.transition = std::move(transition_grad.params);
  loss.grads.dynamics.termination = std::move(termination_grad.params);
  return loss;
}

ModelLoss reward_loss(const MlpParams& reward, const TransitionBatch& batch) {
  check_batch(nullptr, batch);
  const double inv_n = 1.0 / batch.size();
  ForwardCache cache;
  const Eigen::MatrixXd predicted =
      forward_batch(reward, stack_rows(batch.states, batch.actions, batch.next_states), &cache);
  const Eigen::MatrixXd error = predicted - batch.rewards.transpose();
  ModelLoss loss;
  loss.reward = error.squaredNorm() * inv_n;
  loss.total = loss.reward;
  loss.grads.reward = backward(reward, cache, 2.0 * inv_n * error).params;
  return loss;
}

ModelLoss model_loss(const WorldModelParams& model, const TransitionBatch& batch, double clamp) {
  ModelLoss loss = dynamics_loss(model.dynamics, batch, clamp);
  ModelLoss rewards = reward_loss(model.reward, batch);
  loss.reward = rewards.reward;
  loss.total += rewards.reward;
  loss.grads.reward = std::move(rewards.grads.reward);
  return loss;
}

ModelEnsemble make_model_ensemble(const WorldModelShape& shape, int transition_members,
                                  int reward_members, AdamConfig adam, Rng& rng) {
  if (transition_members < 1 || reward_members < 1) {
    throw std::invalid_argument("model ensemble: member counts must be at least 1");
  }
  ModelEnsemble ensemble;
  ensemble.shape = shape;
  for (int m = 0; m < transition_members; ++m) {
    Rng member_rng = rng.fork();
    DynamicsMember member;
    member.params = make_dynamics_model(shape, member_rng);
    member.transition_opt = make_adam_state(member.params.transition, adam);
    member.termination_opt = make_adam_state(member.params.termination, adam);
    ensemble.dynamics.push_back(std::move(member));
  }
  for (int n = 0; n < reward_members; ++n) {
    Rng member_rng = rng.fork();
    RewardMember member;
    member.params = make_reward_model(shape, member_rng);
    member.opt = make_adam_state(member.params, adam);
    ensemble.rewards.push_back(std::move(member));
  }
  return ensemble;
}

double train_model_ensemble(ModelEnsemble& ensemble, const ReplayBuffer& buffer, int updates,
                            std::size_t batch_size, Rng& rng) {
  if (updates <= 0) return 0.0;
  if (buffer.size() < batch_size) {
    throw std::runtime_error("train_model_ensemble: buffer holds " +
                             std::to_string(buffer.size()) + " transitions, need " +
                             std::to_string(batch_size));
  }
  const double clamp = ensemble.shape.termination_clamp;
  double last_round = 0.0;
  for (int u = 0; u < updates; ++u) {
    double dynamics_total = 0.0;
    double reward_total = 0.0;
    for (auto& member : ensemble.dynamics) {
      const TransitionBatch batch = buffer.sample(batch_size, rng);
      const ModelLoss loss = dynamics_loss(member.params, batch, clamp);
      if (!std::isfinite(loss.total)) {
        ++ensemble.rejected_batches;
        continue;
      }
      const AdamReport a =
          adam_step(member.transition_opt, member.params.transition, loss.grads.dynamics.transition);
      const AdamReport b = adam_step(member.termination_opt, member.params.termination,
                                     loss.grads.dynamics.termination);
      if (!a.applied || !b.applied) ++ensemble.rejected_batches;
      dynamics_total += loss.total;
    }
    for (auto& member : ensemble.rewards) {
      const TransitionBatch batch = buffer.sample(batch_size, rng);
      const ModelLoss loss = reward_loss(member.params, batch);
      if (!std::isfinite(loss.total)) {
        ++ensemble.rejected_batches;
        continue;
      }
      if (!adam_step(member.opt, member.params, loss.grads.reward).applied) {
        ++ensemble.rejected_batches;
      }
      reward_total += loss.total;
    }
    last_round = dynamics_total / ensemble.transition_count() +
                 reward_total / ensemble.reward_count();
  }
  return last_round;
}

void write_model_ensemble(std::ostream& out, const ModelEnsemble& ensemble) {
  const auto old_precision = out.precision(17);
  out << "model_ensemble 1\n";
  out << "shape " << ensemble.shape.state_dim << ' ' << ensemble.shape.action_dim << ' '
      << ensemble.shape.termination_clamp << '\n';
  out << "members " << ensemble.dynamics.size() << ' ' << ensemble.rewards.size() << '\n';
  out.precision(old_precision);
  for (std::size_t m = 0; m < ensemble.dynamics.size(); ++m) {
    out << "dynamics " << m << '\n';
    write_mlp(out, ensemble.dynamics[m].params.transition);
    write_mlp(out, ensemble.dynamics[m].params.termination);
  }
  for (std::size_t n = 0; n < ensemble.rewards.size(); ++n) {
    out << "reward " << n << '\n';
    write_mlp(out, ensemble.rewards[n].params);
  }
}

ModelEnsemble read_model_ensemble(std::istream& in, AdamConfig adam) {
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "model_ensemble" || version != 1) {
    throw std::runtime_error("read_model_ensemble: unsupported header");
  }
  ModelEnsemble ensemble;
  std::size_t transition_members = 0, reward_members = 0;
  if (!(in >> tag >> ensemble.shape.state_dim >> ensemble.shape.action_dim >>
        ensemble.shape.termination_clamp) ||
      tag != "shape") {
    throw std::runtime_error("read_model_ensemble: malformed shape line");
  }
  if (!(in >> tag >> transition_members >> reward_members) || tag != "members") {
    throw std::runtime_error("read_model_ensemble: malformed members line");
  }
  std::size_t index = 0;
  for (std::size_t m = 0; m < transition_members; ++m) {
    if (!(in >> tag >> index) || tag != "dynamics" || index != m) {
      throw std::runtime_error("read_model_ensemble: expected dynamics member");
    }
    DynamicsMember member;
    member.params.transition = read_mlp(in);
    member.params.termination = read_mlp(in);
    member.transition_opt = make_adam_state(member.params.transition, adam);
    member.termination_opt = make_adam_state(member.params.termination, adam);
    ensemble.dynamics.push_back(std::move(member));
  }
  for (std::size_t n = 0; n < reward_members; ++n) {
    if (!(in >> tag >> index) || tag != "reward" || index != n) {
      throw std::runtime_error("read_model_ensemble: expected reward member");
    }
    RewardMember member;
    member.params = read_mlp(in);
    member.opt = make_adam_state(member.params, adam);
    ensemble.rewards.push_back(std::move(member));
  }
  if (!ensemble.dynamics.empty()) {
    ensemble.shape.transition_hidden = hidden_sizes(ensemble.dynamics[0].params.transition);
    ensemble.shape.termination_hidden = hidden_sizes(ensemble.dynamics[0].params.termination);
  }
  if (!ensemble.rewards.empty()) {
    ensemble.shape.reward_hidden = hidden_sizes(ensemble.rewards[0].params);
  }
  return ensemble;
}

}  // namespace steve
