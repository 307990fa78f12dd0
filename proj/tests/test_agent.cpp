#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "finite_diff.hpp"
#include "steve/agent.hpp"
#include "steve/value_expansion.hpp"

using namespace steve;

namespace {

AgentConfig small_config(int critics = 2) {
  AgentConfig c;
  c.state_dim = 3;
  c.action_dim = 2;
  c.critic_hidden = {8, 6};
  c.policy_hidden = {7};
  c.critic_count = critics;
  return c;
}

void randomize_biases(MlpParams& net, Rng& rng) {
  for (auto& layer : net.layers) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = rng.uniform(-0.5, 0.5);
  }
}

Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-scale, scale);
  }
  return m;
}

TransitionBatch random_batch(Rng& rng, int n) {
  TransitionBatch b;
  b.states = uniform_matrix(rng, 3, n);
  b.actions = uniform_matrix(rng, 2, n);
  b.next_states = uniform_matrix(rng, 3, n);
  b.rewards = uniform_matrix(rng, n, 1, 2.0).col(0);
  b.dones = Eigen::VectorXd::Zero(n);
  return b;
}

}  // namespace

TEST_CASE("a new agent has matching live and frozen critics") {
  Rng rng(1);
  const Agent agent = make_agent(small_config(3), rng);
  REQUIRE(agent.critic_count() == 3);
  for (const auto& c : agent.critics) CHECK(c.live == c.frozen);
  CHECK(agent.critics[0].live.squared_distance(agent.critics[1].live) > 0.0);
  CHECK(agent.policy.input_dim() == 3);
  CHECK(agent.policy.output_dim() == 2);
  CHECK(agent.critics[0].live.input_dim() == 5);

  AgentConfig bad = small_config();
  bad.critic_count = 0;
  CHECK_THROWS_AS(make_agent(bad, rng), std::invalid_argument);
}

TEST_CASE("policy actions are squashed into the unit box") {
  Rng rng(2);
  Agent agent = make_agent(small_config(), rng);
  for (auto& layer : agent.policy.layers) layer.weight *= 50.0;
  const Eigen::MatrixXd a = policy_actions(agent.policy, uniform_matrix(rng, 3, 100, 5.0));
  CHECK(a.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(a.cwiseAbs().maxCoeff() > 0.9);
}

TEST_CASE("greedy action selection is the squashed policy output") {
  Rng rng(3);
  Agent agent = make_agent(small_config(), rng);
  agent.config.exploration_probability = 1.0;
  const Eigen::Vector3d s(0.2, -0.3, 0.5);
  Rng unused(0);
  const Eigen::VectorXd greedy = select_action(agent, s, false, unused);
  CHECK(greedy.isApprox(policy_actions(agent.policy, s).col(0), 1e-15));
  CHECK(unused == Rng(0));

  Rng noise(4);
  int differing = 0;
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd a = select_action(agent, s, true, noise);
    CHECK(a.cwiseAbs().maxCoeff() <= 1.0);
    differing += (a - greedy).norm() > 1e-6 ? 1 : 0;
  }
  CHECK(differing == 50);

  agent.config.exploration_probability = 0.0;
  CHECK(select_action(agent, s, true, noise) == greedy);
}

TEST_CASE("critic regression gradients match central differences") {
  for (int seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(300 + static_cast<std::uint64_t>(seed));
    Agent agent = make_agent(small_config(1), rng);
    MlpParams critic = agent.critics[0].live;
    randomize_biases(critic, rng);
    const Eigen::MatrixXd s = uniform_matrix(rng, 3, 7);
    const Eigen::MatrixXd a = uniform_matrix(rng, 2, 7);
    const Eigen::VectorXd y = uniform_matrix(rng, 7, 1, 3.0).col(0);
    const Eigen::VectorXd w = (uniform_matrix(rng, 7, 1).array() + 1.0).matrix().col(0);
    const double scale = seed % 2 ? 1.0 : 4.0 / 3.0;
    const Eigen::VectorXd* weights = seed % 3 ? &w : nullptr;
    const RegressionLoss loss = critic_regression_loss(critic, s, a, y, scale, weights);
    auto f = [&](const Eigen::VectorXd& v) {
      MlpParams c = critic;
      c.unflatten(v);
      return critic_regression_loss(c, s, a, y, scale, weights).loss;
    };
    CHECK(testing::gradient_error(loss.grads.flatten(), f, critic.flatten()) < 1e-4);
  }
}

TEST_CASE("critic regression skips non-finite targets") {
  Rng rng(5);
  const Agent agent = make_agent(small_config(1), rng);
  const Eigen::MatrixXd s = uniform_matrix(rng, 3, 4);
  const Eigen::MatrixXd a = uniform_matrix(rng, 2, 4);
  Eigen::VectorXd y(4);
  y << 1.0, std::nan(""), 2.0, INFINITY;
  const RegressionLoss loss = critic_regression_loss(agent.critics[0].live, s, a, y);
  CHECK(loss.skipped == 2);
  const Eigen::VectorXd q = q_values(agent.critics[0].live, s, a);
  const double expected = (std::pow(q(0) - 1.0, 2) + std::pow(q(2) - 2.0, 2)) / 2.0;
  CHECK(loss.loss == doctest::Approx(expected).epsilon(1e-14));
  CHECK(loss.grads.all_finite());
}

TEST_CASE("actor gradients match central differences") {
  for (int seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(400 + static_cast<std::uint64_t>(seed));
    Agent agent = make_agent(small_config(3), rng);
    MlpParams policy = agent.policy;
    randomize_biases(policy, rng);
    for (auto& layer : policy.layers) layer.weight *= 5.0;
    std::vector<const MlpParams*> critics{&agent.critics[0].live};
    if (seed % 2) {
      for (int l = 1; l < 3; ++l) critics.push_back(&agent.critics[static_cast<std::size_t>(l)].live);
    }
    const Eigen::MatrixXd s = uniform_matrix(rng, 3, 6);
    const ActorLoss loss = actor_loss(policy, critics, s);
    auto f = [&](const Eigen::VectorXd& v) {
      MlpParams p = policy;
      p.unflatten(v);
      return actor_loss(p, critics, s).loss;
    };
    CHECK(testing::gradient_error(loss.grads.flatten(), f, policy.flatten()) < 1e-4);
  }
}

TEST_CASE("actor loss is the negated mean critic value") {
  Rng rng(6);
  const Agent agent = make_agent(small_config(2), rng);
  const Eigen::MatrixXd s = uniform_matrix(rng, 3, 5);
  const Eigen::MatrixXd a = policy_actions(agent.policy, s);
  const std::vector<const MlpParams*> critics{&agent.critics[0].live, &agent.critics[1].live};
  const double expected = -0.5 * (q_values(agent.critics[0].live, s, a).mean() +
                                  q_values(agent.critics[1].live, s, a).mean());
  CHECK(actor_loss(agent.policy, critics, s).loss == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("TD-k critic gradients match central differences") {
  for (int seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    Rng rng(500 + static_cast<std::uint64_t>(seed));
    Agent agent = make_agent(small_config(1), rng);
    randomize_biases(agent.critics[0].live, rng);
    const TransitionBatch batch = random_batch(rng, 5);
    const double d = 0.1 * seed / 10.0;
    ExpansionEnsembles e;
    e.policy = policy_fn(agent);
    e.models.push_back({[](const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
                          Eigen::MatrixXd next = 0.9 * s;
                          next.topRows(2) += 0.1 * a;
                          return next;
                        },
                        [d](const Eigen::MatrixXd& s) {
                          return Eigen::VectorXd::Constant(s.cols(), d);
                        }});
    const RewardFn reward = [](const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd&) {
      return Eigen::VectorXd(-(s.colwise().squaredNorm() + a.colwise().squaredNorm()).transpose());
    };
    const ValueFn frozen = frozen_q_functions(agent).front();
    const int H = 1 + seed % 3;
    const RolloutBundle bundle = rollout(e, batch, H, 0.9);
    auto loss_for = [&](const MlpParams& live) {
      const ValueFn live_q = [&live](const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
        return q_values(live, s, a);
      };
      return tdk_losses(bundle, batch, reward, frozen, live_q);
    };
    const TdkTerms terms = loss_for(agent.critics[0].live);

    // The update's regression view of the terms must reproduce the loss and
    // its gradient.
    const int rows = H + 1;
    Eigen::MatrixXd states(3, rows * 5), actions(2, rows * 5);
    Eigen::VectorXd targets(rows * 5), weights(rows * 5);
    for (int k = 0; k < rows; ++k) {
      states.middleCols(k * 5, 5) = terms.states[static_cast<std::size_t>(k)];
      actions.middleCols(k * 5, 5) = terms.actions[static_cast<std::size_t>(k)];
      targets.segment(k * 5, 5) = terms.targets.row(k).transpose();
      weights.segment(k * 5, 5) = terms.weights.row(k).transpose();
    }
    const RegressionLoss reg = critic_regression_loss(
        agent.critics[0].live, states, actions, targets, static_cast<double>(rows) / H, &weights);
    CHECK(reg.loss == doctest::Approx(terms.loss).epsilon(1e-12));
    auto f = [&](const Eigen::VectorXd& v) {
      MlpParams live = agent.critics[0].live;
      live.unflatten(v);
      return loss_for(live).loss;
    };
    CHECK(testing::gradient_error(reg.grads.flatten(), f, agent.critics[0].live.flatten()) < 1e-4);

    const MlpParams before = agent.critics[0].live;
    const MlpParams frozen_before = agent.critics[0].frozen;
    const CriticUpdateReport report = tdk_critic_update(agent, 0, terms);
    CHECK(report.loss == doctest::Approx(terms.loss).epsilon(1e-12));
    CHECK_FALSE(agent.critics[0].live == before);
    CHECK(agent.critics[0].frozen == frozen_before);
  }
}

TEST_CASE("critic updates move live critics only and use one batch per member") {
  Rng rng(7);
  Agent agent = make_agent(small_config(2), rng);
  const std::vector<TransitionBatch> batches{random_batch(rng, 8), random_batch(rng, 8)};
  const std::vector<MlpParams> frozen{agent.critics[0].frozen, agent.critics[1].frozen};
  std::vector<int> sizes;
  const TargetFn targets = [&](const TransitionBatch& b) {
    sizes.push_back(b.size());
    return Eigen::VectorXd(b.rewards);
  };
  const CriticUpdateReport r = critic_update(agent, batches, targets);
  CHECK(sizes == std::vector<int>{8, 8});
  CHECK(r.rejected == 0);
  for (int l = 0; l < 2; ++l) {
    CHECK(agent.critics[static_cast<std::size_t>(l)].frozen == frozen[static_cast<std::size_t>(l)]);
    CHECK_FALSE(agent.critics[static_cast<std::size_t>(l)].live == frozen[static_cast<std::size_t>(l)]);
  }
  refresh_targets(agent);
  CHECK(agent.target_refreshes == 1);
  CHECK(agent.critics[1].frozen == agent.critics[1].live);

  const std::vector<TransitionBatch> one{batches[0]};
  CHECK_THROWS_AS(critic_update(agent, one, targets), std::invalid_argument);
}

TEST_CASE("non-finite gradients are rejected without moving the critic") {
  Rng rng(8);
  Agent agent = make_agent(small_config(1), rng);
  agent.critics[0].live.layers[0].weight(0, 0) = std::nan("");
  const MlpParams before = agent.critics[0].live;
  const TransitionBatch b = random_batch(rng, 4);
  const CriticUpdateReport r = critic_fit(agent, 0, b.states, b.actions, b.rewards);
  CHECK(r.rejected == 1);
  CHECK(agent.critics[0].opt.step == 0);
}

TEST_CASE("repeated critic fits drive the regression loss down") {
  Rng rng(9);
  AgentConfig config = small_config(1);
  config.critic_adam.learning_rate = 1e-2;
  Agent agent = make_agent(config, rng);
  const TransitionBatch b = random_batch(rng, 32);
  const double first = critic_fit(agent, 0, b.states, b.actions, b.rewards).loss;
  double last = first;
  for (int i = 0; i < 500; ++i) last = critic_fit(agent, 0, b.states, b.actions, b.rewards).loss;
  CHECK(last < 0.2 * first);
}

TEST_CASE("actor updates raise the critic's value of the policy") {
  Rng rng(10);
  Agent agent = make_agent(small_config(1), rng);
  const Eigen::MatrixXd s = uniform_matrix(rng, 3, 32);
  const std::vector<const MlpParams*> critic{&agent.critics[0].live};
  const double before = actor_loss(agent.policy, critic, s).loss;
  for (int i = 0; i < 100; ++i) actor_update(agent, s);
  CHECK(actor_loss(agent.policy, critic, s).loss < before);
}

TEST_CASE("agent checkpoints round trip") {
  Rng rng(11);
  Agent agent = make_agent(small_config(2), rng);
  agent.critics[1].frozen.layers[0].bias(0) = 42.0;
  std::stringstream ss;
  write_agent(ss, agent);
  const Agent back = read_agent(ss, agent.config);
  CHECK(back.policy == agent.policy);
  REQUIRE(back.critic_count() == 2);
  CHECK(back.critics[1].live == agent.critics[1].live);
  CHECK(back.critics[1].frozen == agent.critics[1].frozen);

  std::stringstream bad("agent 7\n");
  CHECK_THROWS_AS(read_agent(bad), std::runtime_error);
}
