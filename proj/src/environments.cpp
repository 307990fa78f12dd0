#include "steve/environments.hpp"

#include <stdexcept>
#include <string>

namespace steve {

ChainEnv::ChainEnv(int num_states) : num_states_(num_states) {
  if (num_states < 2) throw std::invalid_argument("ChainEnv: need at least two states");
}

int ChainEnv::reset_index() {
  current_ = 0;
  return current_;
}

double ChainEnv::reward_for(int from, int to) const {
  const int terminal = terminal_state();
  return (from == terminal - 1 && to == terminal) ? static_cast<double>(terminal) : -1.0;
}

ChainEnv::Step ChainEnv::step_index() {
  if (episode_over()) throw std::logic_error("ChainEnv: step from terminal state");
  const int from = current_;
  current_ = from + 1;
  return {from, reward_for(from, current_), current_, current_ == terminal_state()};
}

Eigen::VectorXd ChainEnv::encode(int state) const {
  if (state < 0 || state >= num_states_) throw std::out_of_range("ChainEnv: bad state index");
  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(num_states_);
  one_hot(state) = 1.0;
  return one_hot;
}

int ChainEnv::decode(const Eigen::VectorXd& encoded) {
  Eigen::Index index = 0;
  encoded.maxCoeff(&index);
  return static_cast<int>(index);
}

Eigen::VectorXd ChainEnv::reset() { return encode(reset_index()); }

Transition ChainEnv::step(const Eigen::VectorXd& action) {
  const Step s = step_index();
  return {encode(s.state), action, s.reward, encode(s.next_state), s.done};
}

double true_chain_value(int state, int num_states) {
  ChainEnv env(num_states);
  if (state < 0 || state >= num_states) throw std::out_of_range("true_chain_value: bad index");
  if (state == env.terminal_state()) return 0.0;
  env.reset_index();
  while (env.current() < state) env.step_index();
  double total = 0.0;
  while (!env.episode_over()) total += env.step_index().reward;
  return total;
}

ToyModel::ToyModel(Mode mode, double noise_probability, int num_states)
    : mode_(mode), noise_probability_(noise_probability), num_states_(num_states) {
  if (noise_probability < 0.0 || noise_probability > 1.0) {
    throw std::invalid_argument("ToyModel: noise probability outside [0, 1]");
  }
}

int ToyModel::predict(int state, Rng& rng) const {
  if (state < 0 || state >= num_states_ - 1) {
    throw std::out_of_range("ToyModel: prediction from terminal or invalid state");
  }
  if (mode_ == Mode::kNoisy && rng.bernoulli(noise_probability_)) {
    return static_cast<int>(rng.uniform_int(0, num_states_ - 1));
  }
  return state + 1;
}

PointMassEnv::PointMassEnv(std::uint64_t seed, PointMassConfig config)
    : config_(config), rng_(seed) {}

void PointMassEnv::set_state(const Eigen::Vector2d& position, const Eigen::Vector2d& goal) {
  position_ = position;
  goal_ = goal;
  velocity_.setZero();
  steps_ = 0;
}

Eigen::VectorXd PointMassEnv::observation() const {
  Eigen::VectorXd obs(4);
  obs << position_ - goal_, velocity_;
  return obs;
}

Eigen::VectorXd PointMassEnv::reset() {
  const double r = config_.start_range;
  for (int i = 0; i < 2; ++i) position_(i) = rng_.uniform(-r, r);
  for (int i = 0; i < 2; ++i) goal_(i) = rng_.uniform(-r, r);
  velocity_.setZero();
  steps_ = 0;
  return observation();
}

Transition PointMassEnv::step(const Eigen::VectorXd& action) {
  if (episode_over()) throw std::logic_error("PointMassEnv: step after episode end");
  if (action.size() != 2) throw std::invalid_argument("PointMassEnv: action must be 2-D");
  Transition t;
  t.state = observation();
  const Eigen::Vector2d force = action.cwiseMax(-1.0).cwiseMin(1.0);
  t.action = force;
  position_ += config_.dt * velocity_;
  velocity_ += config_.dt * force - config_.friction * velocity_;
  ++steps_;
  t.reward = -(position_ - goal_).squaredNorm() - config_.action_cost * force.squaredNorm();
  t.next_state = observation();
  t.done = false;
  return t;
}

std::unique_ptr<Environment> make_environment(std::string_view name, std::uint64_t seed) {
  if (name == "chain") return std::make_unique<ChainEnv>();
  if (name == "pointmass") return std::make_unique<PointMassEnv>(seed);
  throw std::invalid_argument("unknown environment: " + std::string(name));
}

}  // namespace steve
