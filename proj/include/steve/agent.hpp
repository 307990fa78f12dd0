#ifndef STEVE_AGENT_HPP
#define STEVE_AGENT_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "steve/adam.hpp"
#include "steve/batch.hpp"
#include "steve/mlp.hpp"
#include "steve/rng.hpp"
#include "steve/value_expansion.hpp"

namespace steve {

struct AgentConfig {
  int state_dim = 0;
  int action_dim = 0;
  std::vector<int> critic_hidden{64, 64};
  std::vector<int> policy_hidden{64, 64};
  int critic_count = 4;
  AdamConfig critic_adam;
  AdamConfig policy_adam;
  // Probability of perturbing an action during collection, and the stddev
  // of the Gaussian noise added before the tanh squash.
  double exploration_probability = 0.05;
  double exploration_noise = 0.3;
  // Backpropagate the actor loss through the mean of all critics instead of
  // the first one.
  bool actor_uses_ensemble_mean = false;
};

struct CriticMember {
  MlpParams live;
  MlpParams frozen;  // used for every target computation
  AdamState opt;
};

// Deterministic actor-critic with an ensemble of critics. Critics read
// state (+) action; the policy network emits a pre-squash action that is
// passed through tanh.
struct Agent {
  AgentConfig config;
  std::vector<CriticMember> critics;
  MlpParams policy;
  AdamState policy_opt;
  std::uint64_t target_refreshes = 0;

  int critic_count() const { return static_cast<int>(critics.size()); }
};

Agent make_agent(const AgentConfig& config, Rng& rng);

Eigen::MatrixXd policy_pre_squash(const MlpParams& policy, const Eigen::MatrixXd& states);
Eigen::MatrixXd policy_actions(const MlpParams& policy, const Eigen::MatrixXd& states);
Eigen::VectorXd q_values(const MlpParams& critic, const Eigen::MatrixXd& states,
                         const Eigen::MatrixXd& actions);

// Callables over the current policy and the frozen critics, for use in
// ExpansionEnsembles. They reference `agent`, which must outlive them.
PolicyFn policy_fn(const Agent& agent);
std::vector<ValueFn> frozen_q_functions(const Agent& agent);

struct RegressionLoss {
  double loss = 0.0;
  MlpParams grads;
  std::size_t skipped = 0;  // samples with a non-finite target
};

// scale * mean_b w_b (Q(s_b, a_b) - y_b)^2 over the samples with finite
// targets; w_b = 1 without `weights`.
RegressionLoss critic_regression_loss(const MlpParams& critic, const Eigen::MatrixXd& states,
                                      const Eigen::MatrixXd& actions,
                                      const Eigen::VectorXd& targets, double scale = 1.0,
                                      const Eigen::VectorXd* weights = nullptr);

struct ActorLoss {
  double loss = 0.0;
  MlpParams grads;
};

// -mean_b Q(s_b, tanh(policy(s_b))) averaged over `critics`, with gradients
// for the policy only.
ActorLoss actor_loss(const MlpParams& policy, std::span<const MlpParams* const> critics,
                     const Eigen::MatrixXd& states);

using TargetFn = std::function<Eigen::VectorXd(const TransitionBatch& batch)>;

struct CriticUpdateReport {
  double loss = 0.0;         // mean over members
  std::size_t skipped = 0;   // non-finite targets dropped
  std::size_t rejected = 0;  // members whose Adam step was rejected
};

// One Adam step per critic member; member l regresses on member_batches[l]
// against target_fn(member_batches[l]). Throws std::invalid_argument when the
// number of batches differs from the number of critics.
CriticUpdateReport critic_update(Agent& agent, std::span<const TransitionBatch> member_batches,
                                 const TargetFn& target_fn);

// One Adam step for a single member on explicit regression pairs.
CriticUpdateReport critic_fit(Agent& agent, int member, const Eigen::MatrixXd& states,
                              const Eigen::MatrixXd& actions, const Eigen::VectorXd& targets,
                              double scale = 1.0, const Eigen::VectorXd* weights = nullptr);

// One Adam step on the TD-k loss for a member.
CriticUpdateReport tdk_critic_update(Agent& agent, int member, const TdkTerms& terms);

double actor_update(Agent& agent, const Eigen::MatrixXd& states);

Eigen::VectorXd select_action(const Agent& agent, const Eigen::VectorXd& state, bool explore,
                              Rng& rng);

// Hard copy of every live critic into its frozen slot.
void refresh_targets(Agent& agent);

// Checkpoint: "agent 1" header, dimensions, the policy, then each critic's
// live and frozen networks in write_mlp format.
void write_agent(std::ostream& out, const Agent& agent);
Agent read_agent(std::istream& in, const AgentConfig& base = {});

}  // namespace steve

#endif  // STEVE_AGENT_HPP
