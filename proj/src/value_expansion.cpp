#include "steve/value_expansion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>

namespace steve {

namespace {

// a * b elementwise, with exact zeros in `a` absorbing non-finite `b`.
Eigen::VectorXd gated(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out(i) = a(i) == 0.0 ? 0.0 : a(i) * b(i);
  return out;
}

void check_ensembles(const ExpansionEnsembles& ensembles, bool need_models) {
  if (!ensembles.policy) throw std::invalid_argument("value expansion: missing policy");
  if (ensembles.q_functions.empty()) {
    throw std::invalid_argument("value expansion: empty Q ensemble");
  }
  if (need_models && (ensembles.models.empty() || ensembles.rewards.empty())) {
    throw std::invalid_argument("value expansion: empty model or reward ensemble");
  }
}

// Weighted target over the horizons flagged in `valid`.
double weighted_target(const Eigen::VectorXd& means, const Eigen::VectorXd& weights) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < means.size(); ++i) {
    if (weights(i) != 0.0) total += weights(i) * means(i);
  }
  return total;
}

Eigen::VectorXd inverse_variance_weights(const Eigen::VectorXd& variances,
                                         const std::vector<bool>& valid, double floor) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(variances.size());
  for (Eigen::Index i = 0; i < variances.size(); ++i) {
    if (valid[static_cast<std::size_t>(i)]) w(i) = 1.0 / (variances(i) + floor);
  }
  return w / w.sum();
}

}  // namespace

int RolloutBundle::batch_size() const {
  return states.empty() || states.front().empty() ? 0
                                                  : static_cast<int>(states.front().front().cols());
}

RolloutBundle rollout(const ExpansionEnsembles& ensembles, const TransitionBatch& start,
                      int horizon, double discount) {
  if (horizon < 0) throw std::invalid_argument("rollout: horizon must be >= 0");
  if (!(discount >= 0.0 && discount < 1.0)) {
    throw std::invalid_argument("rollout: discount must lie in [0, 1)");
  }
  if (horizon > 0 && ensembles.models.empty()) {
    throw std::invalid_argument("rollout: empty model ensemble");
  }
  if (!ensembles.policy) throw std::invalid_argument("rollout: missing policy");

  RolloutBundle bundle;
  bundle.horizon = horizon;
  bundle.discount = discount;
  const Eigen::Index batch = start.size();
  const Eigen::MatrixXd first_action = ensembles.policy(start.next_states);
  // A horizon-0 bundle needs no model; it still carries one entry for s'_0.
  const std::size_t entries = std::max<std::size_t>(ensembles.models.size(), 1);
  for (std::size_t m = 0; m < entries; ++m) {
    std::vector<Eigen::MatrixXd> states{start.next_states};
    std::vector<Eigen::MatrixXd> actions{first_action};
    Eigen::MatrixXd termination(horizon + 1, batch);
    Eigen::MatrixXd continuation(horizon + 1, batch);
    termination.row(0) = start.dones.transpose();
    Eigen::VectorXd alive = Eigen::VectorXd::Ones(batch) - start.dones;
    continuation.row(0) = alive.transpose();
    for (int i = 1; i <= horizon; ++i) {
      const TransitionModelFn& model = ensembles.models[m];
      Eigen::MatrixXd next = model.step(states.back(), actions.back());
      const Eigen::VectorXd done = model.termination(next);
      alive = alive.cwiseProduct(Eigen::VectorXd::Ones(batch) - done);
      termination.row(i) = done.transpose();
      continuation.row(i) = alive.transpose();
      actions.push_back(ensembles.policy(next));
      states.push_back(std::move(next));
    }
    bundle.states.push_back(std::move(states));
    bundle.actions.push_back(std::move(actions));
    bundle.termination.push_back(std::move(termination));
    bundle.continuation.push_back(std::move(continuation));
  }
  return bundle;
}

CandidateTargetMatrix candidate_targets(const RolloutBundle& bundle,
                                        const ExpansionEnsembles& ensembles,
                                        const Eigen::VectorXd& rewards, CandidateOptions options) {
  check_ensembles(ensembles, bundle.horizon > 0);
  if (bundle.model_count() == 0) throw std::invalid_argument("candidate_targets: empty bundle");
  const int H = bundle.horizon;
  const int M = bundle.model_count();
  const int N = static_cast<int>(ensembles.rewards.size());
  const int L = static_cast<int>(ensembles.q_functions.size());
  const int B = bundle.batch_size();
  if (rewards.size() != B) throw std::invalid_argument("candidate_targets: reward count mismatch");
  const double gamma = bundle.discount;

  CandidateTargetMatrix out;
  out.horizon = H;
  out.model_count = M;
  out.reward_count = N;
  out.q_count = L;
  out.candidates.resize(static_cast<std::size_t>(H) + 1);

  // Horizon 0 only depends on the real next state, shared by all models.
  {
    Eigen::MatrixXd& c = out.candidates[0];
    c.resize(L, B);
    const Eigen::VectorXd alive = bundle.continuation[0].row(0).transpose();
    for (int l = 0; l < L; ++l) {
      const Eigen::VectorXd q = ensembles.q_functions[static_cast<std::size_t>(l)](
          bundle.states[0][0], bundle.actions[0][0]);
      c.row(l) = (rewards + gamma * gated(alive, q)).transpose();
    }
  }
  for (int i = 1; i <= H; ++i) out.candidates[static_cast<std::size_t>(i)].resize(M * N * L, B);

  for (int m = 0; m < M; ++m) {
    const auto& states = bundle.states[static_cast<std::size_t>(m)];
    const auto& actions = bundle.actions[static_cast<std::size_t>(m)];
    const auto& cont = bundle.continuation[static_cast<std::size_t>(m)];
    // Q values along this rollout, reused across reward members.
    std::vector<std::vector<Eigen::VectorXd>> q(static_cast<std::size_t>(H) + 1);
    for (int i = 1; i <= H; ++i) {
      for (int l = 0; l < L; ++l) {
        q[static_cast<std::size_t>(i)].push_back(ensembles.q_functions[static_cast<std::size_t>(l)](
            states[static_cast<std::size_t>(i)], actions[static_cast<std::size_t>(i)]));
      }
    }
    for (int n = 0; n < N; ++n) {
      Eigen::VectorXd partial = rewards;
      double discount_power = 1.0;
      for (int i = 1; i <= H; ++i) {
        discount_power *= gamma;
        const auto k = static_cast<std::size_t>(i);
        const Eigen::VectorXd r = ensembles.rewards[static_cast<std::size_t>(n)](
            states[k - 1], actions[k - 1], states[k]);
        partial += discount_power * gated(cont.row(i - 1).transpose(), r);
        const Eigen::VectorXd alive = cont.row(i).transpose();
        for (int l = 0; l < L; ++l) {
          out.candidates[k].row((m * N + n) * L + l) =
              (partial + discount_power * gamma * gated(alive, q[k][static_cast<std::size_t>(l)]))
                  .transpose();
        }
      }
    }
  }

  out.means.resize(H + 1, B);
  out.variances.resize(H + 1, B);
  for (int i = 0; i <= H; ++i) {
    const Eigen::MatrixXd& c = out.candidates[static_cast<std::size_t>(i)];
    for (int b = 0; b < B; ++b) {
      double sum = 0.0;
      int count = 0;
      for (Eigen::Index r = 0; r < c.rows(); ++r) {
        if (std::isfinite(c(r, b))) {
          sum += c(r, b);
          ++count;
        } else {
          ++out.non_finite;
        }
      }
      const double mean = count > 0 ? sum / count : std::nan("");
      double squares = 0.0;
      for (Eigen::Index r = 0; r < c.rows(); ++r) {
        if (std::isfinite(c(r, b))) squares += (c(r, b) - mean) * (c(r, b) - mean);
      }
      const int dof = options.population_variance ? count : count - 1;
      out.means(i, b) = mean;
      out.variances(i, b) = count == 0 ? std::nan("") : (dof > 0 ? squares / dof : 0.0);
    }
  }

  if (options.with_covariance) {
    const int J = H == 0 ? L : M * N * L;
    out.covariances.reserve(static_cast<std::size_t>(B));
    Eigen::MatrixXd joint(H + 1, J);
    for (int b = 0; b < B; ++b) {
      int used = 0;
      for (int j = 0; j < J; ++j) {
        bool finite = true;
        for (int i = 0; i <= H; ++i) {
          const double v = i == 0 ? out.candidates[0](j % L, b)
                                  : out.candidates[static_cast<std::size_t>(i)](j, b);
          joint(i, used) = v;
          finite = finite && std::isfinite(v);
        }
        if (finite) ++used;
      }
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(H + 1, H + 1);
      if (used > 0) {
        const auto samples = joint.leftCols(used);
        const Eigen::VectorXd mean = samples.rowwise().mean();
        const Eigen::MatrixXd centered = samples.colwise() - mean;
        const int dof = options.population_variance ? used : used - 1;
        if (dof > 0) cov = centered * centered.transpose() / dof;
      }
      out.covariances.push_back(std::move(cov));
    }
  }
  return out;
}

std::string WeightingStrategy::name() const {
  switch (kind) {
    case WeightingKind::kTd:
      return "td";
    case WeightingKind::kMve:
      return "mve";
    case WeightingKind::kMean:
      return "mean";
    case WeightingKind::kTdLambda:
      return "tdlambda";
    case WeightingKind::kSteve:
      return "steve";
    case WeightingKind::kCovSteve:
      return "cov_steve";
  }
  return "steve";
}

WeightingKind parse_weighting(std::string_view name) {
  if (name == "td") return WeightingKind::kTd;
  if (name == "mve") return WeightingKind::kMve;
  if (name == "mean") return WeightingKind::kMean;
  if (name == "tdlambda") return WeightingKind::kTdLambda;
  if (name == "steve") return WeightingKind::kSteve;
  if (name == "cov_steve") return WeightingKind::kCovSteve;
  throw std::invalid_argument("unknown weighting strategy: " + std::string(name));
}

CombineResult combine(const Eigen::VectorXd& means, const Eigen::VectorXd& variances,
                      const Eigen::MatrixXd* covariance, const WeightingStrategy& strategy) {
  const Eigen::Index count = means.size();
  if (count == 0) throw std::invalid_argument("combine: no horizons");
  if (variances.size() != count) throw std::invalid_argument("combine: size mismatch");

  std::vector<bool> valid(static_cast<std::size_t>(count));
  int valid_count = 0;
  for (Eigen::Index i = 0; i < count; ++i) {
    valid[static_cast<std::size_t>(i)] = std::isfinite(means(i)) && std::isfinite(variances(i));
    valid_count += valid[static_cast<std::size_t>(i)] ? 1 : 0;
  }

  CombineResult result;
  result.weights = Eigen::VectorXd::Zero(count);
  auto single = [&](Eigen::Index index) {
    if (valid[static_cast<std::size_t>(index)]) result.weights(index) = 1.0;
  };

  if (valid_count > 0) {
    switch (strategy.kind) {
      case WeightingKind::kTd:
        single(0);
        break;
      case WeightingKind::kMve:
        single(count - 1);
        break;
      case WeightingKind::kMean:
        for (Eigen::Index i = 0; i < count; ++i) {
          if (valid[static_cast<std::size_t>(i)]) result.weights(i) = 1.0 / valid_count;
        }
        break;
      case WeightingKind::kTdLambda: {
        double power = 1.0;
        for (Eigen::Index i = 0; i < count; ++i) {
          if (valid[static_cast<std::size_t>(i)]) result.weights(i) = power;
          power *= strategy.lambda;
        }
        const double total = result.weights.sum();
        if (total > 0.0) result.weights /= total;
        break;
      }
      case WeightingKind::kSteve:
        result.weights = inverse_variance_weights(variances, valid, strategy.variance_floor);
        break;
      case WeightingKind::kCovSteve: {
        if (!covariance || covariance->rows() != count || covariance->cols() != count) {
          throw std::invalid_argument("combine: cov_steve needs an (H+1)x(H+1) covariance");
        }
        std::vector<Eigen::Index> index;
        for (Eigen::Index i = 0; i < count; ++i) {
          if (valid[static_cast<std::size_t>(i)]) index.push_back(i);
        }
        const auto k = static_cast<Eigen::Index>(index.size());
        Eigen::MatrixXd sigma(k, k);
        for (Eigen::Index a = 0; a < k; ++a) {
          for (Eigen::Index b = 0; b < k; ++b) sigma(a, b) = (*covariance)(index[a], index[b]);
        }
        sigma.diagonal().array() += strategy.variance_floor;
        auto solve = [&](const Eigen::MatrixXd& m, Eigen::VectorXd& w) {
          Eigen::LLT<Eigen::MatrixXd> llt(m);
          if (llt.info() != Eigen::Success) return false;
          w = llt.solve(Eigen::VectorXd::Ones(k));
          const double total = w.sum();
          if (!w.allFinite() || !std::isfinite(total) || total == 0.0) return false;
          w /= total;
          return true;
        };
        Eigen::VectorXd w;
        bool ok = solve(sigma, w);
        if (!ok) {
          // Ridge proportional to the mean variance.
          Eigen::MatrixXd ridged = sigma;
          ridged.diagonal().array() += 1e-6 * sigma.trace() / static_cast<double>(k);
          ok = solve(ridged, w);
        }
        if (ok) {
          for (Eigen::Index a = 0; a < k; ++a) result.weights(index[a]) = w(a);
        } else {
          result.fell_back = true;
          result.weights = inverse_variance_weights(variances, valid, strategy.variance_floor);
        }
        break;
      }
    }
  }
  result.target = result.weights.cwiseAbs().sum() > 0.0 ? weighted_target(means, result.weights)
                                                        : std::nan("");
  return result;
}

CombineResult combine(const CandidateTargetMatrix& matrix, int sample,
                      const WeightingStrategy& strategy) {
  const Eigen::MatrixXd* cov = nullptr;
  if (strategy.kind == WeightingKind::kCovSteve) {
    if (matrix.covariances.empty()) {
      throw std::invalid_argument("combine: cov_steve needs candidate covariances");
    }
    cov = &matrix.covariances[static_cast<std::size_t>(sample)];
  }
  return combine(matrix.means.col(sample), matrix.variances.col(sample), cov, strategy);
}

BatchTargets combine_batch(const CandidateTargetMatrix& matrix, const WeightingStrategy& strategy) {
  const int B = matrix.batch_size();
  BatchTargets out;
  out.targets.resize(B);
  out.weights.resize(matrix.horizon + 1, B);
  out.non_finite_candidates = matrix.non_finite;
  for (int b = 0; b < B; ++b) {
    CombineResult r = combine(matrix, b, strategy);
    out.targets(b) = r.target;
    out.weights.col(b) = r.weights;
    out.fallbacks += r.fell_back ? 1 : 0;
  }
  return out;
}

BatchTargets expansion_targets(const ExpansionEnsembles& ensembles, const TransitionBatch& batch,
                               int horizon, double discount, const WeightingStrategy& strategy,
                               CandidateOptions options) {
  options.with_covariance = strategy.kind == WeightingKind::kCovSteve;
  const RolloutBundle bundle = rollout(ensembles, batch, horizon, discount);
  const CandidateTargetMatrix matrix = candidate_targets(bundle, ensembles, batch.rewards, options);
  return combine_batch(matrix, strategy);
}

double steve_target(const Transition& transition, const ExpansionEnsembles& ensembles,
                    int horizon, double discount, double variance_floor) {
  const TransitionBatch batch = TransitionBatch::from(std::span<const Transition>(&transition, 1));
  WeightingStrategy strategy = WeightingStrategy::steve();
  strategy.variance_floor = variance_floor;
  return expansion_targets(ensembles, batch, horizon, discount, strategy).targets(0);
}

double model_usage(const Eigen::MatrixXd& weights) {
  if (weights.cols() == 0) return 0.0;
  return 1.0 - weights.row(0).mean();
}

TdkTerms tdk_losses(const RolloutBundle& bundle, const TransitionBatch& batch,
                    const RewardFn& reward, const ValueFn& frozen_q, const ValueFn& live_q,
                    int model_index) {
  const int H = bundle.horizon;
  if (H < 1) throw std::invalid_argument("tdk_losses: horizon must be >= 1");
  if (model_index < 0 || model_index >= bundle.model_count()) {
    throw std::invalid_argument("tdk_losses: model index out of range");
  }
  const auto& states = bundle.states[static_cast<std::size_t>(model_index)];
  const auto& actions = bundle.actions[static_cast<std::size_t>(model_index)];
  const auto& termination = bundle.termination[static_cast<std::size_t>(model_index)];
  const auto& continuation = bundle.continuation[static_cast<std::size_t>(model_index)];
  const int B = batch.size();
  const double gamma = bundle.discount;

  TdkTerms out;
  out.horizon = H;
  out.states.push_back(batch.states);
  out.actions.push_back(batch.actions);
  for (int i = 0; i < H; ++i) {
    out.states.push_back(states[static_cast<std::size_t>(i)]);
    out.actions.push_back(actions[static_cast<std::size_t>(i)]);
  }

  // Row k of `targets` belongs to rollout index i = k - 1.
  out.targets.resize(H + 1, B);
  Eigen::VectorXd next_value = frozen_q(states[static_cast<std::size_t>(H)],
                                        actions[static_cast<std::size_t>(H)]);
  for (int k = H; k >= 0; --k) {
    const int i = k - 1;
    const Eigen::VectorXd step_reward =
        i < 0 ? batch.rewards
              : reward(states[static_cast<std::size_t>(i)], actions[static_cast<std::size_t>(i)],
                       states[static_cast<std::size_t>(i) + 1]);
    const Eigen::VectorXd alive =
        Eigen::VectorXd::Ones(B) - termination.row(k).transpose();
    next_value = step_reward + gamma * gated(alive, next_value);
    out.targets.row(k) = next_value.transpose();
  }

  out.predictions.resize(H + 1, B);
  for (int k = 0; k <= H; ++k) {
    out.predictions.row(k) =
        live_q(out.states[static_cast<std::size_t>(k)], out.actions[static_cast<std::size_t>(k)])
            .transpose();
  }
  out.weights.resize(H + 1, B);
  out.weights.row(0).setOnes();
  out.weights.bottomRows(H) = continuation.topRows(H);
  out.loss = (out.weights.array() * (out.predictions - out.targets).array().square()).sum() / B / H;
  return out;
}

}  // namespace steve
