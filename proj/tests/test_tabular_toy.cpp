#include <doctest.h>

#include <cmath>
#include <vector>

#include "steve/tabular_toy.hpp"

using namespace steve;

namespace {

TabularQ exact_table() {
  TabularQ t{Eigen::VectorXd(101)};
  for (int i = 0; i < 101; ++i) t.values(i) = true_chain_value(i);
  return t;
}

ChainEnv::Step chain_step(int i) {
  const ChainEnv env;
  return {i, env.reward_for(i, i + 1), i + 1, i + 1 == env.terminal_state()};
}

std::vector<ToyModel> oracles(int n) {
  return std::vector<ToyModel>(static_cast<std::size_t>(n), ToyModel(ToyModel::Mode::kOracle));
}

}  // namespace

TEST_CASE("tabular init draws integers in range and pins the terminal") {
  Rng a(1), b(1);
  const TabularQ t = init_tabular(a);
  CHECK(t.num_states() == 101);
  CHECK(t[100] == 0.0);
  for (int i = 0; i < 100; ++i) {
    CHECK(t[i] >= 0.0);
    CHECK(t[i] <= 99.0);
    CHECK(t[i] == std::floor(t[i]));
  }
  CHECK(init_tabular(b).values == t.values);
}

TEST_CASE("TD update is a hard one-step assignment") {
  Rng rng(2);
  TabularQ t = init_tabular(rng);
  tabular_td_update(t, chain_step(99));
  CHECK(t[99] == 100.0);
  t.values(43) = true_chain_value(43);
  tabular_td_update(t, chain_step(42));
  CHECK(t[42] == true_chain_value(42));
  CHECK(t[100] == 0.0);
  CHECK_THROWS_AS(tabular_td_update(t, {100, 0.0, 100, true}), std::invalid_argument);
}

TEST_CASE("value error is the mean squared error over nonterminal states") {
  TabularQ t = exact_table();
  CHECK(value_error(t) == 0.0);
  t.values.head(100).array() += 1.0;
  CHECK(value_error(t) == doctest::Approx(1.0).epsilon(1e-15));

  Rng rng(3);
  const TabularQ fresh = init_tabular(rng);
  double total = 0.0;
  for (int i = 0; i < 100; ++i) total += std::pow(fresh[i] - (i + 1), 2);
  CHECK(value_error(fresh) == doctest::Approx(total / 100).epsilon(1e-14));
  CHECK(value_error(fresh) >= 0.0);
  CHECK(value_error(fresh) <= 99.0 * 99.0);
}

TEST_CASE("ensemble value error uses the mean table") {
  TabularQ low = exact_table(), high = exact_table();
  low.values.head(100).array() -= 2.0;
  high.values.head(100).array() += 2.0;
  CHECK(value_error(std::vector<TabularQ>{low, high}) == 0.0);
  CHECK_THROWS_AS(value_error(std::vector<TabularQ>{}), std::invalid_argument);
}

TEST_CASE("exact tables are a fixed point under oracle expansion") {
  std::vector<TabularQ> tables(8, exact_table());
  const std::vector<ToyModel> models = oracles(8);
  Rng rng(4);
  for (const auto& s : {WeightingStrategy::td(), WeightingStrategy::mve(),
                        WeightingStrategy::steve(), WeightingStrategy::cov_steve()}) {
    for (int i : {0, 50, 97, 99}) {
      const ToyUpdate u = tabular_expansion_update(tables, 3, models, chain_step(i), 5, s, rng);
      CHECK(u.target == doctest::Approx(true_chain_value(i)).epsilon(1e-12));
    }
  }
  CHECK(value_error(tables) < 1e-20);
}

TEST_CASE("oracle horizon-5 MVE target reads five states ahead") {
  Rng init(5), rng(6);
  std::vector<TabularQ> tables{init_tabular(init)};
  const std::vector<ToyModel> models = oracles(1);
  const int i = 20;
  const ToyUpdate u = tabular_expansion_update(tables, 0, models, chain_step(i), 5,
                                               WeightingStrategy::mve(), rng);
  // Real step to s21, then five simulated -1 steps to s26.
  CHECK(u.target == -6.0 + tables[0][i + 6]);
  CHECK(tables[0][i] == u.target);
  CHECK(u.weights(5) == 1.0);
}

TEST_CASE("a rollout that reaches the terminal stops accumulating") {
  Rng init(7), rng(8);
  std::vector<TabularQ> tables{init_tabular(init)};
  const std::vector<ToyModel> models = oracles(1);
  const ToyUpdate u = tabular_expansion_update(tables, 0, models, chain_step(97), 5,
                                               WeightingStrategy::mve(), rng);
  CHECK(u.target == -1.0 - 1.0 + 100.0);
}

TEST_CASE("TD ignores models and the ensemble mean sets the target") {
  Rng init(9), rng(10);
  std::vector<TabularQ> tables{init_tabular(init), init_tabular(init)};
  const double expected = -1.0 + 0.5 * (tables[0][31] + tables[1][31]);
  const ToyUpdate u = tabular_expansion_update(tables, 1, {}, chain_step(30), 0,
                                               WeightingStrategy::td(), rng);
  CHECK(u.target == expected);
  CHECK(tables[1][30] == expected);
  CHECK(rng == Rng(10));
  CHECK_THROWS_AS(tabular_expansion_update(tables, 0, {}, chain_step(30), 2,
                                           WeightingStrategy::steve(), rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(tabular_expansion_update(tables, 0, {}, chain_step(100), 0,
                                           WeightingStrategy::td(), rng),
                  std::invalid_argument);
}

TEST_CASE("noisy models push STEVE weight back toward horizon zero") {
  auto mean_w0 = [](ToyModel::Mode mode) {
    Rng init(11), states(12), noise(13);
    std::vector<TabularQ> tables;
    for (int l = 0; l < 8; ++l) tables.push_back(init_tabular(init));
    const std::vector<ToyModel> models(8, ToyModel(mode, 0.10));
    double total = 0.0;
    for (int k = 0; k < 1000; ++k) {
      const int i = static_cast<int>(states.uniform_int(0, 99));
      total += tabular_expansion_update(tables, k % 8, models, chain_step(i), 5,
                                        WeightingStrategy::steve(), noise)
                   .weights(0);
    }
    return total / 1000;
  };
  CHECK(mean_w0(ToyModel::Mode::kNoisy) > mean_w0(ToyModel::Mode::kOracle));
}

TEST_CASE("toy runs are reproducible and stop at the threshold") {
  ToyConfig c;
  c.max_updates = 300;
  c.seed = 3;
  const ToyRun a = run_toy(c);
  const ToyRun b = run_toy(c);
  CHECK(a.value_errors == b.value_errors);
  CHECK(a.value_errors.size() == 300);
  CHECK(a.model_usage.size() == 300);

  c.max_updates = 30000;
  c.stop_below = 1.0;
  const ToyRun stopped = run_toy(c);
  REQUIRE(stopped.first_below(1.0).has_value());
  CHECK(*stopped.first_below(1.0) == static_cast<int>(stopped.value_errors.size()));
  CHECK_FALSE(stopped.first_below(-1.0).has_value());
}

TEST_CASE("every strategy starts from the same tables") {
  ToyConfig c;
  c.max_updates = 1;
  c.strategy = WeightingStrategy::td();
  ToyConfig d = c;
  d.strategy = WeightingStrategy::mve();
  // One update touches at most eight entries of each table, so the first
  // errors stay close; identical initial tables make them comparable.
  const double td = run_toy(c).value_errors.front();
  const double mve = run_toy(d).value_errors.front();
  CHECK(std::abs(td - mve) < 0.2 * td);
}

TEST_CASE("model usage by strategy") {
  ToyConfig c;
  c.max_updates = 200;
  c.strategy = WeightingStrategy::td();
  for (double u : run_toy(c).model_usage) CHECK(u == 0.0);
  c.strategy = WeightingStrategy::mve();
  for (double u : run_toy(c).model_usage) CHECK(u == 1.0);
  c.strategy = WeightingStrategy::steve();
  for (double u : run_toy(c).model_usage) {
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("oracle runs converge for every strategy") {
  for (const auto& s : {WeightingStrategy::td(), WeightingStrategy::mve(),
                        WeightingStrategy::steve()}) {
    CAPTURE(s.name());
    ToyConfig c;
    c.strategy = s;
    c.stop_below = 1e-6;
    c.max_updates = 40000;
    const ToyRun r = run_toy(c);
    CHECK(r.value_errors.back() < 1e-6);
  }
}
