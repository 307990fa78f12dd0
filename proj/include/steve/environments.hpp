#ifndef STEVE_ENVIRONMENTS_HPP
#define STEVE_ENVIRONMENTS_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "steve/rng.hpp"

namespace steve {

// One environment step. `done` marks a true terminal next state; time-limit
// truncation is not termination and is reported by Environment::episode_over.
struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;

  virtual Eigen::VectorXd reset() = 0;
  // Throws std::logic_error when the episode is already over.
  virtual Transition step(const Eigen::VectorXd& action) = 0;
  virtual bool episode_over() const = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;
};

// Deterministic chain s_0 -> s_1 -> ... -> s_{n-1}, with s_{n-1} terminal.
// Every step pays -1 except the final one into the terminal, which pays
// +(n-1). States are presented to networks one-hot encoded.
class ChainEnv final : public Environment {
 public:
  static constexpr int kDefaultStates = 101;

  struct Step {
    int state;
    double reward;
    int next_state;
    bool done;
  };

  explicit ChainEnv(int num_states = kDefaultStates);

  int num_states() const { return num_states_; }
  int terminal_state() const { return num_states_ - 1; }
  int current() const { return current_; }

  int reset_index();
  Step step_index();
  // Reward for moving from `from` to `to` under the chain's reward scheme.
  double reward_for(int from, int to) const;

  Eigen::VectorXd encode(int state) const;
  // Index of the largest component.
  static int decode(const Eigen::VectorXd& encoded);

  std::string name() const override { return "chain"; }
  int state_dim() const override { return num_states_; }
  int action_dim() const override { return 1; }
  Eigen::VectorXd reset() override;
  Transition step(const Eigen::VectorXd& action) override;
  bool episode_over() const override { return current_ == terminal_state(); }
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<ChainEnv>(*this);
  }

 private:
  int num_states_;
  int current_ = 0;
};

// Exact undiscounted return from state i of a chain with `num_states`
// states, found by stepping the environment until termination.
double true_chain_value(int state, int num_states = ChainEnv::kDefaultStates);

// Hand-given chain dynamics model. In noisy mode each prediction is, with
// probability `noise_probability`, replaced by a uniformly random state
// (terminal included).
class ToyModel {
 public:
  enum class Mode { kOracle, kNoisy };

  explicit ToyModel(Mode mode = Mode::kOracle, double noise_probability = 0.10,
                    int num_states = ChainEnv::kDefaultStates);

  Mode mode() const { return mode_; }
  double noise_probability() const { return noise_probability_; }
  int num_states() const { return num_states_; }

  // Throws std::out_of_range for a terminal or out-of-range index.
  int predict(int state, Rng& rng) const;

 private:
  Mode mode_;
  double noise_probability_;
  int num_states_;
};

struct PointMassConfig {
  double dt = 0.05;
  double friction = 0.1;
  double action_cost = 0.01;
  int max_steps = 200;
  double start_range = 1.0;  // start and goal drawn uniformly in [-r, r]^2
};

// 2-D point mass driven to a goal. The observation is
// (position - goal, velocity) so that a single policy serves every goal.
class PointMassEnv final : public Environment {
 public:
  explicit PointMassEnv(std::uint64_t seed, PointMassConfig config = {});

  const PointMassConfig& config() const { return config_; }
  const Eigen::Vector2d& position() const { return position_; }
  const Eigen::Vector2d& velocity() const { return velocity_; }
  const Eigen::Vector2d& goal() const { return goal_; }
  int steps() const { return steps_; }

  // Places the mass explicitly (velocity zero) and restarts the step counter.
  void set_state(const Eigen::Vector2d& position, const Eigen::Vector2d& goal);
  Eigen::VectorXd observation() const;

  std::string name() const override { return "pointmass"; }
  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  Eigen::VectorXd reset() override;
  Transition step(const Eigen::VectorXd& action) override;
  bool episode_over() const override { return steps_ >= config_.max_steps; }
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<PointMassEnv>(*this);
  }

 private:
  PointMassConfig config_;
  Rng rng_;
  Eigen::Vector2d position_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d velocity_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d goal_ = Eigen::Vector2d::Zero();
  int steps_ = 0;
};

// "chain" or "pointmass"; throws std::invalid_argument otherwise.
std::unique_ptr<Environment> make_environment(std::string_view name, std::uint64_t seed);

}  // namespace steve

#endif  // STEVE_ENVIRONMENTS_HPP
