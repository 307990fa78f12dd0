#include "steve/agent.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace steve {

Agent make_agent(const AgentConfig& config, Rng& rng) {
  if (config.state_dim <= 0 || config.action_dim <= 0) {
    throw std::invalid_argument("make_agent: state and action dimensions must be positive");
  }
  if (config.critic_count < 1) throw std::invalid_argument("make_agent: need at least one critic");
  Agent agent;
  agent.config = config;
  for (int l = 0; l < config.critic_count; ++l) {
    Rng member_rng = rng.fork();
    CriticMember member;
    member.live = make_mlp({config.state_dim + config.action_dim, config.critic_hidden, 1,
                            Activation::kRelu, Activation::kIdentity},
                           member_rng);
    member.frozen = member.live;
    member.opt = make_adam_state(member.live, config.critic_adam);
    agent.critics.push_back(std::move(member));
  }
  Rng policy_rng = rng.fork();
  agent.policy = make_mlp({config.state_dim, config.policy_hidden, config.action_dim,
                           Activation::kRelu, Activation::kIdentity, 0.1},
                          policy_rng);
  agent.policy_opt = make_adam_state(agent.policy, config.policy_adam);
  return agent;
}

Eigen::MatrixXd policy_pre_squash(const MlpParams& policy, const Eigen::MatrixXd& states) {
  return forward_batch(policy, states);
}

Eigen::MatrixXd policy_actions(const MlpParams& policy, const Eigen::MatrixXd& states) {
  return forward_batch(policy, states).array().tanh().matrix();
}

Eigen::VectorXd q_values(const MlpParams& critic, const Eigen::MatrixXd& states,
                         const Eigen::MatrixXd& actions) {
  return forward_batch(critic, stack_rows(states, actions)).row(0).transpose();
}

PolicyFn policy_fn(const Agent& agent) {
  return [&agent](const Eigen::MatrixXd& states) { return policy_actions(agent.policy, states); };
}

std::vector<ValueFn> frozen_q_functions(const Agent& agent) {
  std::vector<ValueFn> fns;
  for (const auto& member : agent.critics) {
    const MlpParams* frozen = &member.frozen;
    fns.push_back([frozen](const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
      return q_values(*frozen, s, a);
    });
  }
  return fns;
}

RegressionLoss critic_regression_loss(const MlpParams& critic, const Eigen::MatrixXd& states,
                                      const Eigen::MatrixXd& actions,
                                      const Eigen::VectorXd& targets, double scale,
                                      const Eigen::VectorXd* weights) {
  if (states.cols() != targets.size() || actions.cols() != targets.size() ||
      (weights && weights->size() != targets.size())) {
    throw std::invalid_argument("critic regression: batch size mismatch");
  }
  RegressionLoss out;
  ForwardCache cache;
  const Eigen::MatrixXd q = forward_batch(critic, stack_rows(states, actions), &cache);
  Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(1, targets.size());
  int used = 0;
  for (Eigen::Index b = 0; b < targets.size(); ++b) {
    if (std::isfinite(targets(b))) ++used;
  }
  out.skipped = static_cast<std::size_t>(targets.size() - used);
  if (used == 0) {
    out.grads = critic.zeros_like();
    return out;
  }
  for (Eigen::Index b = 0; b < targets.size(); ++b) {
    if (!std::isfinite(targets(b))) continue;
    const double error = q(0, b) - targets(b);
    const double w = weights ? (*weights)(b) : 1.0;
    out.loss += w * scale * error * error / used;
    upstream(0, b) = 2.0 * w * scale * error / used;
  }
  out.grads = backward(critic, cache, upstream).params;
  return out;
}

ActorLoss actor_loss(const MlpParams& policy, std::span<const MlpParams* const> critics,
                     const Eigen::MatrixXd& states) {
  if (critics.empty()) throw std::invalid_argument("actor_loss: no critics");
  const Eigen::Index batch = states.cols();
  ForwardCache policy_cache;
  const Eigen::MatrixXd pre = forward_batch(policy, states, &policy_cache);
  const Eigen::MatrixXd actions = pre.array().tanh().matrix();
  const Eigen::MatrixXd input = stack_rows(states, actions);

  ActorLoss out;
  Eigen::MatrixXd action_grad = Eigen::MatrixXd::Zero(actions.rows(), batch);
  const double weight = 1.0 / static_cast<double>(critics.size());
  const Eigen::MatrixXd upstream = Eigen::MatrixXd::Constant(1, batch, -weight / batch);
  for (const MlpParams* critic : critics) {
    ForwardCache cache;
    const Eigen::MatrixXd q = forward_batch(*critic, input, &cache);
    out.loss -= weight * q.mean();
    action_grad += backward(*critic, cache, upstream).input.bottomRows(actions.rows());
  }
  const Eigen::MatrixXd pre_grad =
      (action_grad.array() * (1.0 - actions.array().square())).matrix();
  out.grads = backward(policy, policy_cache, pre_grad).params;
  return out;
}

CriticUpdateReport critic_fit(Agent& agent, int member, const Eigen::MatrixXd& states,
                              const Eigen::MatrixXd& actions, const Eigen::VectorXd& targets,
                              double scale, const Eigen::VectorXd* weights) {
  CriticMember& critic = agent.critics.at(static_cast<std::size_t>(member));
  const RegressionLoss loss =
      critic_regression_loss(critic.live, states, actions, targets, scale, weights);
  CriticUpdateReport report;
  report.loss = loss.loss;
  report.skipped = loss.skipped;
  if (!adam_step(critic.opt, critic.live, loss.grads).applied) report.rejected = 1;
  return report;
}

CriticUpdateReport critic_update(Agent& agent, std::span<const TransitionBatch> member_batches,
                                 const TargetFn& target_fn) {
  if (static_cast<int>(member_batches.size()) != agent.critic_count()) {
    throw std::invalid_argument("critic_update: need one batch per critic");
  }
  // Targets for every member first, so that no live update can leak into
  // another member's target.
  std::vector<Eigen::VectorXd> targets;
  for (const auto& batch : member_batches) targets.push_back(target_fn(batch));

  CriticUpdateReport report;
  for (int l = 0; l < agent.critic_count(); ++l) {
    const auto& batch = member_batches[static_cast<std::size_t>(l)];
    const CriticUpdateReport r = critic_fit(agent, l, batch.states, batch.actions,
                                            targets[static_cast<std::size_t>(l)]);
    report.loss += r.loss / agent.critic_count();
    report.skipped += r.skipped;
    report.rejected += r.rejected;
  }
  return report;
}

CriticUpdateReport tdk_critic_update(Agent& agent, int member, const TdkTerms& terms) {
  const int rows = terms.horizon + 1;
  const Eigen::Index batch = terms.targets.cols();
  Eigen::MatrixXd states(terms.states.front().rows(), rows * batch);
  Eigen::MatrixXd actions(terms.actions.front().rows(), rows * batch);
  Eigen::VectorXd targets(rows * batch);
  Eigen::VectorXd weights(rows * batch);
  for (int k = 0; k < rows; ++k) {
    states.middleCols(k * batch, batch) = terms.states[static_cast<std::size_t>(k)];
    actions.middleCols(k * batch, batch) = terms.actions[static_cast<std::size_t>(k)];
    targets.segment(k * batch, batch) = terms.targets.row(k).transpose();
    weights.segment(k * batch, batch) = terms.weights.row(k).transpose();
  }
  // The mean over (H+1) * B pairs times (H+1)/H gives the 1/H normalization.
  const double scale = static_cast<double>(rows) / terms.horizon;
  return critic_fit(agent, member, states, actions, targets, scale, &weights);
}

double actor_update(Agent& agent, const Eigen::MatrixXd& states) {
  std::vector<const MlpParams*> critics;
  if (agent.config.actor_uses_ensemble_mean) {
    for (const auto& member : agent.critics) critics.push_back(&member.live);
  } else {
    critics.push_back(&agent.critics.front().live);
  }
  const ActorLoss loss = actor_loss(agent.policy, critics, states);
  adam_step(agent.policy_opt, agent.policy, loss.grads);
  return loss.loss;
}

Eigen::VectorXd select_action(const Agent& agent, const Eigen::VectorXd& state, bool explore,
                              Rng& rng) {
  Eigen::VectorXd pre = forward(agent.policy, state);
  if (explore && rng.bernoulli(agent.config.exploration_probability)) {
    for (Eigen::Index i = 0; i < pre.size(); ++i) {
      pre(i) += rng.normal(0.0, agent.config.exploration_noise);
    }
  }
  return pre.array().tanh().matrix();
}

void refresh_targets(Agent& agent) {
  for (auto& member : agent.critics) member.frozen = member.live;
  ++agent.target_refreshes;
}

void write_agent(std::ostream& out, const Agent& agent) {
  out << "agent 1\n";
  out << "dims " << agent.config.state_dim << ' ' << agent.config.action_dim << ' '
      << agent.critics.size() << '\n';
  write_mlp(out, agent.policy);
  for (const auto& member : agent.critics) {
    write_mlp(out, member.live);
    write_mlp(out, member.frozen);
  }
}

Agent read_agent(std::istream& in, const AgentConfig& base) {
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "agent" || version != 1) {
    throw std::runtime_error("read_agent: unsupported header");
  }
  Agent agent;
  agent.config = base;
  std::size_t critics = 0;
  if (!(in >> tag >> agent.config.state_dim >> agent.config.action_dim >> critics) ||
      tag != "dims") {
    throw std::runtime_error("read_agent: malformed dims line");
  }
  agent.config.critic_count = static_cast<int>(critics);
  agent.policy = read_mlp(in);
  agent.policy_opt = make_adam_state(agent.policy, agent.config.policy_adam);
  for (std::size_t l = 0; l < critics; ++l) {
    CriticMember member;
    member.live = read_mlp(in);
    member.frozen = read_mlp(in);
    member.opt = make_adam_state(member.live, agent.config.critic_adam);
    agent.critics.push_back(std::move(member));
  }
  return agent;
}

}  // namespace steve
