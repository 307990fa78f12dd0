#include "steve/batch.hpp"

#include <stdexcept>

namespace steve {

TransitionBatch TransitionBatch::from(std::span<const Transition> transitions) {
  if (transitions.empty()) throw std::invalid_argument("TransitionBatch: empty batch");
  const auto n = static_cast<Eigen::Index>(transitions.size());
  const auto& first = transitions.front();
  TransitionBatch batch;
  batch.states.resize(first.state.size(), n);
  batch.actions.resize(first.action.size(), n);
  batch.next_states.resize(first.next_state.size(), n);
  batch.rewards.resize(n);
  batch.dones.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = transitions[static_cast<std::size_t>(i)];
    if (t.state.size() != batch.states.rows() || t.action.size() != batch.actions.rows() ||
        t.next_state.size() != batch.next_states.rows()) {
      throw std::invalid_argument("TransitionBatch: inconsistent transition shapes");
    }
    batch.states.col(i) = t.state;
    batch.actions.col(i) = t.action;
    batch.next_states.col(i) = t.next_state;
    batch.rewards(i) = t.reward;
    batch.dones(i) = t.done ? 1.0 : 0.0;
  }
  return batch;
}

Transition TransitionBatch::at(int index) const {
  return {states.col(index), actions.col(index), rewards(index), next_states.col(index),
          dones(index) > 0.5};
}

Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
  if (top.cols() != bottom.cols()) throw std::invalid_argument("stack_rows: column mismatch");
  Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& top, const Eigen::MatrixXd& middle,
                           const Eigen::MatrixXd& bottom) {
  if (top.cols() != middle.cols() || top.cols() != bottom.cols()) {
    throw std::invalid_argument("stack_rows: column mismatch");
  }
  Eigen::MatrixXd out(top.rows() + middle.rows() + bottom.rows(), top.cols());
  out << top, middle, bottom;
  return out;
}

}  // namespace steve
