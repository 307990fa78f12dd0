#ifndef STEVE_VALUE_EXPANSION_HPP
#define STEVE_VALUE_EXPANSION_HPP

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "steve/batch.hpp"

namespace steve {

// Batched callables. Every matrix argument holds one sample per column.
using PolicyFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& states)>;
using StepFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& states,
                                             const Eigen::MatrixXd& actions)>;
using TerminationFn = std::function<Eigen::VectorXd(const Eigen::MatrixXd& states)>;
using RewardFn = std::function<Eigen::VectorXd(
    const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions,
    const Eigen::MatrixXd& next_states)>;
using ValueFn = std::function<Eigen::VectorXd(const Eigen::MatrixXd& states,
                                              const Eigen::MatrixXd& actions)>;

struct TransitionModelFn {
  StepFn step;
  TerminationFn termination;  // probability that a state is terminal
};

// The M transition models, N reward models and L (frozen) Q-functions used
// to form candidate targets, plus the policy that drives the rollouts.
struct ExpansionEnsembles {
  std::vector<TransitionModelFn> models;
  std::vector<RewardFn> rewards;
  std::vector<ValueFn> q_functions;
  PolicyFn policy;
};

// Model rollouts from the real next states of a batch. For model m:
//   states[m][i]   s'_i, with s'_0 the real next state   (i = 0..H)
//   actions[m][i]  policy action at s'_i                 (i = 0..H)
//   termination[m](i, b)   d(s') for i = 0, d_hat(s'_i) for i >= 1
//   continuation[m](i, b)  D^i = (1 - d(s')) * prod_{j=1..i} (1 - d_hat(s'_j))
struct RolloutBundle {
  int horizon = 0;
  double discount = 0.0;
  std::vector<std::vector<Eigen::MatrixXd>> states;
  std::vector<std::vector<Eigen::MatrixXd>> actions;
  std::vector<Eigen::MatrixXd> termination;
  std::vector<Eigen::MatrixXd> continuation;

  int model_count() const { return static_cast<int>(states.size()); }
  int batch_size() const;
};

// Throws std::invalid_argument for a negative horizon, a discount outside
// [0, 1), or an empty model ensemble with a positive horizon.
RolloutBundle rollout(const ExpansionEnsembles& ensembles, const TransitionBatch& start,
                      int horizon, double discount);

struct CandidateOptions {
  // Divide by the count (true) or count - 1.
  bool population_variance = true;
  bool with_covariance = false;
};

// Candidate targets for every horizon i = 0..H.
//   candidates[0]  L x B    r + gamma * D^0 * Q_l(s'_0, a'_0)
//   candidates[i]  MNL x B  r + sum_{k=1..i} gamma^k D^{k-1} r_n(s'_{k-1}, a'_{k-1}, s'_k)
//                             + gamma^{i+1} D^i Q_l(s'_i, a'_i)
// Rows of candidates[i >= 1] are ordered (m, n, l) with l fastest.
struct CandidateTargetMatrix {
  int horizon = 0;
  int model_count = 0;
  int reward_count = 0;
  int q_count = 0;
  std::vector<Eigen::MatrixXd> candidates;
  Eigen::MatrixXd means;      // (H+1) x B
  Eigen::MatrixXd variances;  // (H+1) x B
  // Per sample, (H+1) x (H+1); only filled when requested. Horizon-0
  // candidates are paired with every (m, n) sharing their l.
  std::vector<Eigen::MatrixXd> covariances;
  std::size_t non_finite = 0;  // candidates excluded from the statistics

  int batch_size() const { return static_cast<int>(means.cols()); }
};

CandidateTargetMatrix candidate_targets(const RolloutBundle& bundle,
                                        const ExpansionEnsembles& ensembles,
                                        const Eigen::VectorXd& rewards,
                                        CandidateOptions options = {});

enum class WeightingKind { kTd, kMve, kMean, kTdLambda, kSteve, kCovSteve };

struct WeightingStrategy {
  WeightingKind kind = WeightingKind::kSteve;
  double lambda = 0.5;           // TD(lambda) only
  double variance_floor = 1e-8;  // added to every variance before inversion

  static WeightingStrategy td() { return {WeightingKind::kTd}; }
  static WeightingStrategy mve() { return {WeightingKind::kMve}; }
  static WeightingStrategy mean() { return {WeightingKind::kMean}; }
  static WeightingStrategy td_lambda(double lambda) { return {WeightingKind::kTdLambda, lambda}; }
  static WeightingStrategy steve() { return {WeightingKind::kSteve}; }
  static WeightingStrategy cov_steve() { return {WeightingKind::kCovSteve}; }

  std::string name() const;
};

// Accepts td, mve, mean, tdlambda, steve, cov_steve.
WeightingKind parse_weighting(std::string_view name);

struct CombineResult {
  double target = 0.0;
  Eigen::VectorXd weights;  // length H+1
  bool fell_back = false;   // covariance solve failed; diagonal weights used
};

// Weights over horizons from per-horizon statistics. Horizons with a
// non-finite mean receive zero weight. `covariance` is required for
// kCovSteve and ignored otherwise.
CombineResult combine(const Eigen::VectorXd& means, const Eigen::VectorXd& variances,
                      const Eigen::MatrixXd* covariance, const WeightingStrategy& strategy);

CombineResult combine(const CandidateTargetMatrix& matrix, int sample,
                      const WeightingStrategy& strategy);

struct BatchTargets {
  Eigen::VectorXd targets;  // B
  Eigen::MatrixXd weights;  // (H+1) x B
  std::size_t fallbacks = 0;
  std::size_t non_finite_candidates = 0;
};

BatchTargets combine_batch(const CandidateTargetMatrix& matrix, const WeightingStrategy& strategy);

// rollout -> candidate_targets -> combine for a whole batch.
BatchTargets expansion_targets(const ExpansionEnsembles& ensembles, const TransitionBatch& batch,
                               int horizon, double discount, const WeightingStrategy& strategy,
                               CandidateOptions options = {});

// Single-transition STEVE target.
double steve_target(const Transition& transition, const ExpansionEnsembles& ensembles,
                    int horizon, double discount, double variance_floor = 1e-8);

// Mean probability mass placed on horizons >= 1, over the columns of
// `weights` ((H+1) x B).
double model_usage(const Eigen::MatrixXd& weights);

// Regression pairs for the TD-k loss along the rollout of one model:
//   (1/H) * sum_{i=-1..H-1} w_i (Q(s'_i, a_i) - y_i)^2
// with s'_{-1} = s, a_{-1} = a, and y_i the expansion target that starts
// from s'_i and bootstraps with the frozen Q at s'_H:
//   y_{H-1} = r_{H-1} + gamma (1 - d_hat(s'_H)) Q(s'_H, a'_H)
//   y_i     = r_i + gamma (1 - d_hat(s'_{i+1})) y_{i+1}
// where r_{-1} is the real reward, the i = -1 step uses (1 - d(s')), and
// r_i = r_hat(s'_i, a'_i, s'_{i+1}). The weight w_i is the probability that
// s'_i is still live (w_{-1} = 1, w_i = D^i), so states the rollout has
// already terminated in are not fitted to rewards collected after the end.
struct TdkTerms {
  int horizon = 0;
  std::vector<Eigen::MatrixXd> states;   // H+1 entries, i = -1..H-1
  std::vector<Eigen::MatrixXd> actions;  // H+1 entries
  Eigen::MatrixXd targets;               // (H+1) x B
  Eigen::MatrixXd predictions;           // (H+1) x B, live Q
  Eigen::MatrixXd weights;               // (H+1) x B
  double loss = 0.0;
};

// Throws std::invalid_argument when the bundle horizon is below 1.
TdkTerms tdk_losses(const RolloutBundle& bundle, const TransitionBatch& batch,
                    const RewardFn& reward, const ValueFn& frozen_q, const ValueFn& live_q,
                    int model_index = 0);

}  // namespace steve

#endif  // STEVE_VALUE_EXPANSION_HPP
