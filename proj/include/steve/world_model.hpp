#ifndef STEVE_WORLD_MODEL_HPP
#define STEVE_WORLD_MODEL_HPP

#include <cstddef>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "steve/adam.hpp"
#include "steve/batch.hpp"
#include "steve/mlp.hpp"
#include "steve/replay_buffer.hpp"
#include "steve/rng.hpp"

namespace steve {

struct WorldModelShape {
  int state_dim = 0;
  int action_dim = 0;
  std::vector<int> transition_hidden{64, 64};
  std::vector<int> termination_hidden{64, 64};
  std::vector<int> reward_hidden{64, 64};
  // Termination probabilities are clamped to [clamp, 1 - clamp].
  double termination_clamp = 1e-7;
};

// Transition and termination networks. The transition network maps s (+) a
// to a state delta; the termination network maps a state to a logit.
struct DynamicsModel {
  MlpParams transition;
  MlpParams termination;
};

struct WorldModelParams {
  DynamicsModel dynamics;
  MlpParams reward;  // s (+) a (+) s' -> scalar
};

DynamicsModel make_dynamics_model(const WorldModelShape& shape, Rng& rng);
MlpParams make_reward_model(const WorldModelShape& shape, Rng& rng);
WorldModelParams make_world_model(const WorldModelShape& shape, Rng& rng);

// Batched predictions; columns are samples.
Eigen::MatrixXd predict_next_states(const DynamicsModel& model, const Eigen::MatrixXd& states,
                                    const Eigen::MatrixXd& actions);
Eigen::VectorXd predict_termination(const DynamicsModel& model, const Eigen::MatrixXd& states,
                                    double clamp);
Eigen::VectorXd predict_rewards(const MlpParams& reward, const Eigen::MatrixXd& states,
                                const Eigen::MatrixXd& actions,
                                const Eigen::MatrixXd& next_states);

struct ModelPrediction {
  Eigen::VectorXd next_state;
  double termination_probability = 0.0;  // of the predicted next state
  double reward = 0.0;                   // r(s, a, predicted next state)
};

ModelPrediction predict(const WorldModelParams& model, const Eigen::VectorXd& state,
                        const Eigen::VectorXd& action, double clamp);

struct ModelLoss {
  double total = 0.0;
  double transition = 0.0;
  double termination = 0.0;
  double reward = 0.0;
  WorldModelParams grads;
};

// Batch mean of
//   |T(s,a) - s'|^2 + H(d(s'), d(T(s,a))) + (r(s,a,s') - r)^2
// with gradients for all three networks. The termination term is evaluated
// at the predicted next state, so it also backpropagates into the
// transition network. Throws std::invalid_argument on an empty batch.
ModelLoss model_loss(const WorldModelParams& model, const TransitionBatch& batch,
                     double clamp);

// Same loss split by parameter owner, for ensembles where transition and
// reward members are trained separately.
ModelLoss dynamics_loss(const DynamicsModel& model, const TransitionBatch& batch, double clamp);
ModelLoss reward_loss(const MlpParams& reward, const TransitionBatch& batch);

struct DynamicsMember {
  DynamicsModel params;
  AdamState transition_opt;
  AdamState termination_opt;
};

struct RewardMember {
  MlpParams params;
  AdamState opt;
};

// M dynamics models and N reward models, each independently initialized.
struct ModelEnsemble {
  WorldModelShape shape;
  std::vector<DynamicsMember> dynamics;
  std::vector<RewardMember> rewards;
  std::size_t rejected_batches = 0;

  int transition_count() const { return static_cast<int>(dynamics.size()); }
  int reward_count() const { return static_cast<int>(rewards.size()); }
};

ModelEnsemble make_model_ensemble(const WorldModelShape& shape, int transition_members,
                                  int reward_members, AdamConfig adam, Rng& rng);

// `updates` Adam steps per member, each on its own minibatch drawn from the
// shared buffer. Returns the mean total loss over the final round (0 when
// updates == 0). Throws std::runtime_error before any update when the buffer
// holds fewer than `batch_size` transitions.
double train_model_ensemble(ModelEnsemble& ensemble, const ReplayBuffer& buffer,
                            int updates, std::size_t batch_size, Rng& rng);

// Checkpoint: "model_ensemble 1" header, the shape, then every member's
// networks in write_mlp format.
void write_model_ensemble(std::ostream& out, const ModelEnsemble& ensemble);
ModelEnsemble read_model_ensemble(std::istream& in, AdamConfig adam = {});

}  // namespace steve

#endif  // STEVE_WORLD_MODEL_HPP
