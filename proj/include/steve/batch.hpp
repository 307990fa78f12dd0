#ifndef STEVE_BATCH_HPP
#define STEVE_BATCH_HPP

#include <span>

#include <Eigen/Core>

#include "steve/environments.hpp"

namespace steve {

// Column-per-sample view of a minibatch of transitions.
struct TransitionBatch {
  Eigen::MatrixXd states;       // state_dim x B
  Eigen::MatrixXd actions;      // action_dim x B
  Eigen::VectorXd rewards;      // B
  Eigen::MatrixXd next_states;  // state_dim x B
  Eigen::VectorXd dones;        // B, 1.0 where next state is terminal

  int size() const { return static_cast<int>(rewards.size()); }

  static TransitionBatch from(std::span<const Transition> transitions);
  Transition at(int index) const;
};

// Row-stacks two column blocks: [top; bottom].
Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom);
Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& top, const Eigen::MatrixXd& middle,
                           const Eigen::MatrixXd& bottom);

}  // namespace steve

#endif  // STEVE_BATCH_HPP
