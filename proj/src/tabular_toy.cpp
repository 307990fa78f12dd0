#include "steve/tabular_toy.hpp"

#include <stdexcept>

namespace steve {

namespace {

// Brute-force values are recomputed only when the chain length changes.
const Eigen::VectorXd& true_values(int num_states) {
  thread_local Eigen::VectorXd cache;
  if (cache.size() != num_states) {
    cache.resize(num_states);
    for (int i = 0; i < num_states; ++i) cache(i) = true_chain_value(i, num_states);
  }
  return cache;
}

}  // namespace

TabularQ init_tabular(Rng& rng, int num_states) {
  TabularQ table;
  table.values.resize(num_states);
  for (int i = 0; i + 1 < num_states; ++i) {
    table.values(i) = static_cast<double>(rng.uniform_int(0, 99));
  }
  table.values(num_states - 1) = 0.0;
  return table;
}

void tabular_td_update(TabularQ& table, const ChainEnv::Step& transition) {
  if (transition.state < 0 || transition.state >= table.terminal()) {
    throw std::invalid_argument("tabular_td_update: update from terminal or invalid state");
  }
  table.values(transition.state) = transition.reward + table[transition.next_state];
}

ToyUpdate tabular_expansion_update(std::vector<TabularQ>& tables, int member,
                                   const std::vector<ToyModel>& models,
                                   const ChainEnv::Step& transition, int horizon,
                                   const WeightingStrategy& strategy, Rng& model_rng) {
  if (tables.empty()) throw std::invalid_argument("tabular_expansion_update: no tables");
  if (horizon < 0) throw std::invalid_argument("tabular_expansion_update: negative horizon");
  if (horizon > 0 && models.empty()) {
    throw std::invalid_argument("tabular_expansion_update: horizon > 0 needs models");
  }
  const int terminal = tables.front().terminal();
  if (transition.state < 0 || transition.state >= terminal) {
    throw std::invalid_argument("tabular_expansion_update: update from terminal state");
  }
  const ChainEnv chain(tables.front().num_states());
  const int L = static_cast<int>(tables.size());
  const int M = horizon > 0 ? static_cast<int>(models.size()) : 0;

  // joint(i, j): candidate at horizon i for joint sample j = m * L + l.
  // Horizon 0 does not depend on the model, so its L values repeat across m.
  const int joint_count = horizon > 0 ? M * L : L;
  Eigen::MatrixXd joint(horizon + 1, joint_count);
  for (int j = 0; j < joint_count; ++j) {
    joint(0, j) = transition.reward + tables[static_cast<std::size_t>(j % L)][transition.next_state];
  }
  for (int m = 0; m < M; ++m) {
    int state = transition.next_state;
    double partial = transition.reward;
    for (int i = 1; i <= horizon; ++i) {
      if (state != terminal) {
        const int next = models[static_cast<std::size_t>(m)].predict(state, model_rng);
        partial += chain.reward_for(state, next);
        state = next;
      }
      for (int l = 0; l < L; ++l) {
        joint(i, m * L + l) = partial + tables[static_cast<std::size_t>(l)][state];
      }
    }
  }

  const Eigen::VectorXd means = joint.rowwise().mean();
  const Eigen::MatrixXd centered = joint.colwise() - means;
  const Eigen::VectorXd variances = centered.rowwise().squaredNorm() / joint_count;
  Eigen::MatrixXd covariance;
  if (strategy.kind == WeightingKind::kCovSteve) {
    covariance = centered * centered.transpose() / joint_count;
  }

  const CombineResult combined = combine(means, variances, &covariance, strategy);
  tables[static_cast<std::size_t>(member)].values(transition.state) = combined.target;
  return {combined.target, combined.weights};
}

double value_error(const TabularQ& table) {
  const int nonterminal = table.terminal();
  const Eigen::VectorXd& truth = true_values(table.num_states());
  return (table.values.head(nonterminal) - truth.head(nonterminal)).squaredNorm() / nonterminal;
}

double value_error(const std::vector<TabularQ>& tables) {
  if (tables.empty()) throw std::invalid_argument("value_error: no tables");
  TabularQ mean{Eigen::VectorXd::Zero(tables.front().num_states())};
  for (const auto& t : tables) mean.values += t.values;
  mean.values /= static_cast<double>(tables.size());
  return value_error(mean);
}

std::optional<int> ToyRun::first_below(double threshold) const {
  for (std::size_t i = 0; i < value_errors.size(); ++i) {
    if (value_errors[i] < threshold) return static_cast<int>(i) + 1;
  }
  return std::nullopt;
}

ToyRun run_toy(const ToyConfig& config) {
  if (config.ensemble_size < 1) throw std::invalid_argument("run_toy: ensemble size < 1");
  Rng init_rng = Rng::stream(config.seed, 0);
  Rng state_rng = Rng::stream(config.seed, 1);
  Rng model_rng = Rng::stream(config.seed, 2);

  std::vector<TabularQ> tables;
  for (int l = 0; l < config.ensemble_size; ++l) {
    tables.push_back(init_tabular(init_rng, config.num_states));
  }
  std::vector<ToyModel> models(static_cast<std::size_t>(config.ensemble_size),
                               ToyModel(config.model_mode, config.noise_probability,
                                        config.num_states));
  const int horizon = config.strategy.kind == WeightingKind::kTd ? 0 : config.horizon;
  const ChainEnv chain(config.num_states);

  ToyRun run;
  for (int update = 0; update < config.max_updates; ++update) {
    double usage = 0.0;
    for (int l = 0; l < config.ensemble_size; ++l) {
      const int state = static_cast<int>(state_rng.uniform_int(0, chain.terminal_state() - 1));
      const ChainEnv::Step step{state, chain.reward_for(state, state + 1), state + 1,
                                state + 1 == chain.terminal_state()};
      const ToyUpdate u =
          tabular_expansion_update(tables, l, models, step, horizon, config.strategy, model_rng);
      usage += 1.0 - u.weights(0);
    }
    run.value_errors.push_back(value_error(tables));
    run.model_usage.push_back(usage / config.ensemble_size);
    if (config.stop_below && run.value_errors.back() < *config.stop_below) break;
  }
  return run;
}

}  // namespace steve
