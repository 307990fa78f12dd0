#ifndef STEVE_TRAINER_HPP
#define STEVE_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "steve/agent.hpp"
#include "steve/environments.hpp"
#include "steve/mlp.hpp"
#include "steve/replay_buffer.hpp"
#include "steve/value_expansion.hpp"
#include "steve/world_model.hpp"

namespace steve {

// Every hyperparameter of a run. Text form is one `key = value` per line;
// see TrainConfig::set for the keys.
struct TrainConfig {
  std::string environment = "pointmass";
  std::string profile = "desk";
  // td, mve, ensemble_mve, mean, tdlambda, steve, cov_steve
  std::string strategy = "steve";
  int horizon = 3;
  double discount = 0.99;
  double lambda = 0.5;
  double variance_floor = 1e-8;
  int transition_models = 4;  // M
  int reward_models = 4;      // N
  int q_functions = 4;        // L
  int batch_size = 64;
  int model_batch_size = 128;
  long buffer_capacity = 100000;
  long warmup_frames = 2000;
  long pretrain_updates = 2000;
  double updates_per_frame = 0.25;
  double model_updates_per_frame = 0.25;
  long checkpoint_interval = 250;  // target refresh and snapshot cadence
  long eval_interval = 500;
  int eval_episodes = 10;
  long total_frames = 50000;
  std::uint64_t seed = 0;
  std::vector<int> hidden{64, 64};             // policy and critics
  std::vector<int> model_hidden{64, 64};       // reward and termination
  std::vector<int> transition_hidden{64, 64};  // transition
  double learning_rate = 3e-4;
  double exploration_probability = 1.0;
  double exploration_noise = 0.3;
  bool actor_uses_ensemble_mean = true;
  bool async = false;
  int actors = 1;
  bool gate_updates = true;  // async: never run ahead of collected frames

  static TrainConfig desk();
  static TrainConfig paper();
  static TrainConfig for_profile(const std::string& profile);

  // Sets one field from text. Throws std::invalid_argument naming the key
  // for unknown keys or unparsable values. Setting `profile` resets every
  // field to that profile's defaults, so it should come first.
  void set(const std::string& key, const std::string& value);
  // Range checks. Throws std::invalid_argument naming the offending field.
  void validate() const;

  // Applies strategy presets: mve runs single-member ensembles with TD-k.
  TrainConfig resolved() const;

  // Strategy-derived settings.
  WeightingStrategy weighting() const;
  bool uses_model() const { return strategy != "td"; }
  bool uses_tdk() const { return strategy == "mve"; }
  // Horizon actually used for targets (0 for td).
  int effective_horizon() const { return strategy == "td" ? 0 : horizon; }

  std::map<std::string, std::string> to_map() const;
};

bool is_known_strategy(const std::string& name);
std::vector<std::string> known_strategies();

// Applies `key = value` lines; blank lines and `#` comments are skipped, as
// are keys in the `run.` namespace (manifest metadata). Throws
// std::invalid_argument with the line number on malformed input.
void apply_config_text(TrainConfig& config, std::istream& in);
TrainConfig load_config(const std::string& path, const TrainConfig& base = TrainConfig::desk());
void write_config(std::ostream& out, const TrainConfig& config);

// One metrics row. Unset fields are written as empty CSV cells.
struct MetricsRow {
  long step = 0;
  std::optional<long> frames;
  std::optional<double> score;
  std::optional<double> value_error;
  std::optional<double> critic_loss;
  std::optional<double> model_loss;
  std::optional<double> model_usage;
  std::optional<double> wall_clock_s;
};

extern const char* const kMetricsHeader;
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

using ActionFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& state)>;

// Mean undiscounted return over `episodes` greedy episodes. Throws
// std::invalid_argument when episodes < 1.
double evaluate(const ActionFn& policy, Environment& env, int episodes);
double evaluate(const MlpParams& policy, Environment& env, int episodes);
// Uniform random actions in [-1, 1]^d.
double random_policy_score(Environment& env, int episodes, Rng& rng);

// Discounted return of the chain's only policy from state i.
double discounted_chain_value(int state, double discount,
                              int num_states = ChainEnv::kDefaultStates);
// Mean over nonterminal chain states of the squared error between the
// ensemble-mean critic at (s, pi(s)) and the discounted true value.
double chain_value_error(const Agent& agent, const ChainEnv& env, double discount);

// Callables over a model ensemble and an agent's policy and frozen critics.
// `models` may be null for a model-free (horizon 0) ensemble. The returned
// functions reference their arguments.
ExpansionEnsembles make_expansion_ensembles(const ModelEnsemble* models, const Agent& agent);

AgentConfig agent_config_for(const TrainConfig& config, int state_dim, int action_dim);
WorldModelShape model_shape_for(const TrainConfig& config, int state_dim, int action_dim);

struct TrainResult {
  TrainConfig config;
  std::vector<MetricsRow> metrics;
  // One entry per policy update: mean over critic members of 1 - w_0.
  std::vector<double> update_usage;
  long policy_updates = 0;
  long model_updates = 0;  // per member, including pretraining
  long frames = 0;
  double random_score = 0.0;
  double final_score = 0.0;
  std::vector<long> actor_frames;  // async only
  std::string error;               // async: set when a worker failed
};

struct RunOutput {
  // Directory for metrics.csv, manifest.txt and checkpoints/. Empty: no files.
  std::string directory;
  std::string version = "dev";
};

// Synchronous run: warmup with random actions, model pretraining, then
// collection interleaved with updates at the configured ratios. Fully
// deterministic given the config. Throws std::invalid_argument on a bad
// config and std::runtime_error after writing a diagnostic dump when a
// loss turns non-finite.
TrainResult run_training(const TrainConfig& config, const RunOutput& output = {});

// Hooks for exercising failure handling.
struct AsyncHooks {
  // Called by actor `actor` before collecting global frame `frame`; an
  // exception stops the run.
  std::function<void(int actor, long frame)> before_frame;
};

// Asynchronous run: `config.actors` collection workers, a transition queue
// with blocking backpressure feeding the buffer, a model learner, and the
// policy learner, which reloads the latest model snapshot at every
// checkpoint. Rows carry wall-clock time. A failing worker stops all
// threads; the partial artifacts are written and the error is reported in
// TrainResult::error.
TrainResult run_async(const TrainConfig& config, const RunOutput& output = {},
                      const AsyncHooks& hooks = {});

}  // namespace steve

#endif  // STEVE_TRAINER_HPP
