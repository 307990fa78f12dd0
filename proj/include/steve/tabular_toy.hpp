#ifndef STEVE_TABULAR_TOY_HPP
#define STEVE_TABULAR_TOY_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "steve/environments.hpp"
#include "steve/rng.hpp"
#include "steve/value_expansion.hpp"

namespace steve {

// Lookup-table value estimate for the chain's single action. The terminal
// entry is pinned at zero.
struct TabularQ {
  Eigen::VectorXd values;

  int num_states() const { return static_cast<int>(values.size()); }
  int terminal() const { return num_states() - 1; }
  double operator[](int state) const { return values(state); }
};

// Uniform random integers in [0, 99] for every nonterminal entry.
TabularQ init_tabular(Rng& rng, int num_states = ChainEnv::kDefaultStates);

// Hard assignment Q(s_i) = r + Q(s_{i+1}). Throws std::invalid_argument for
// an update from the terminal state.
void tabular_td_update(TabularQ& table, const ChainEnv::Step& transition);

struct ToyUpdate {
  double target = 0.0;
  Eigen::VectorXd weights;  // over horizons 0..H
};

// Rolls every model `horizon` steps from the transition's next state
// (undiscounted, true reward scheme along the simulated path), forms the
// candidate targets from all tables, combines them with `strategy` and
// hard-assigns the result to tables[member]. A horizon of 0 uses no model.
ToyUpdate tabular_expansion_update(std::vector<TabularQ>& tables, int member,
                                   const std::vector<ToyModel>& models,
                                   const ChainEnv::Step& transition, int horizon,
                                   const WeightingStrategy& strategy, Rng& model_rng);

// Mean squared error over the nonterminal states against brute-force values.
double value_error(const TabularQ& table);
// Uses the ensemble-mean table.
double value_error(const std::vector<TabularQ>& tables);

struct ToyConfig {
  WeightingStrategy strategy = WeightingStrategy::steve();
  int horizon = 5;
  ToyModel::Mode model_mode = ToyModel::Mode::kOracle;
  double noise_probability = 0.10;
  int ensemble_size = 8;
  int num_states = ChainEnv::kDefaultStates;
  int max_updates = 30000;
  // Stop after the first update whose value error drops below this.
  std::optional<double> stop_below;
  std::uint64_t seed = 0;
};

struct ToyRun {
  std::vector<double> value_errors;  // after each update
  std::vector<double> model_usage;   // mean 1 - w_0 over the members updated

  // 1-based index of the first update with error below `threshold`.
  std::optional<int> first_below(double threshold) const;
};

// Each update samples one nonterminal state per ensemble member and updates
// that member. TD ignores the horizon. Initial tables, state sampling and
// model noise use separate streams of `seed`, so strategies see the same
// initial tables and state sequence.
ToyRun run_toy(const ToyConfig& config);

}  // namespace steve

#endif  // STEVE_TABULAR_TOY_HPP
