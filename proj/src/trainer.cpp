#include "steve/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "trainer_internal.hpp"

namespace steve {

const char* const kMetricsHeader =
    "step,frames,score,value_error,critic_loss,model_loss,model_usage,wall_clock_s";

namespace {

template <class T>
void cell(std::ostream& out, const std::optional<T>& v) {
  out << ',';
  if (v) out << *v;
}

}  // namespace

void write_metrics_header(std::ostream& out) { out << kMetricsHeader << '\n'; }

void write_metrics_row(std::ostream& out, const MetricsRow& row) {
  const auto precision = out.precision(17);
  out << row.step;
  cell(out, row.frames);
  cell(out, row.score);
  cell(out, row.value_error);
  cell(out, row.critic_loss);
  cell(out, row.model_loss);
  cell(out, row.model_usage);
  cell(out, row.wall_clock_s);
  out << '\n';
  out.precision(precision);
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot write '" + path + "'");
  write_metrics_header(out);
  for (const auto& row : rows) write_metrics_row(out, row);
}

double evaluate(const ActionFn& policy, Environment& env, int episodes) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Eigen::VectorXd state = env.reset();
    while (!env.episode_over()) {
      const Transition t = env.step(policy(state));
      total += t.reward;
      state = t.next_state;
    }
  }
  return total / episodes;
}

double evaluate(const MlpParams& policy, Environment& env, int episodes) {
  return evaluate(
      [&policy](const Eigen::VectorXd& s) -> Eigen::VectorXd {
        return policy_actions(policy, s).col(0);
      },
      env, episodes);
}

double random_policy_score(Environment& env, int episodes, Rng& rng) {
  const int dim = env.action_dim();
  return evaluate(
      [&rng, dim](const Eigen::VectorXd&) -> Eigen::VectorXd {
        Eigen::VectorXd a(dim);
        for (int i = 0; i < dim; ++i) a(i) = rng.uniform(-1.0, 1.0);
        return a;
      },
      env, episodes);
}

double discounted_chain_value(int state, double discount, int num_states) {
  ChainEnv env(num_states);
  if (state < 0 || state >= env.terminal_state()) {
    throw std::out_of_range("discounted_chain_value: state must be nonterminal");
  }
  double value = 0.0;
  double weight = 1.0;
  for (int s = state; s < env.terminal_state(); ++s) {
    value += weight * env.reward_for(s, s + 1);
    weight *= discount;
  }
  return value;
}

double chain_value_error(const Agent& agent, const ChainEnv& env, double discount) {
  const int n = env.terminal_state();
  Eigen::MatrixXd states = Eigen::MatrixXd::Zero(env.num_states(), n);
  for (int i = 0; i < n; ++i) states(i, i) = 1.0;
  const Eigen::MatrixXd actions = policy_actions(agent.policy, states);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  for (const auto& c : agent.critics) q += q_values(c.live, states, actions);
  q /= agent.critic_count();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double diff = q(i) - discounted_chain_value(i, discount, env.num_states());
    total += diff * diff;
  }
  return total / n;
}

ExpansionEnsembles make_expansion_ensembles(const ModelEnsemble* models, const Agent& agent) {
  ExpansionEnsembles e;
  e.policy = policy_fn(agent);
  e.q_functions = frozen_q_functions(agent);
  if (models == nullptr) return e;
  const double clamp = models->shape.termination_clamp;
  for (const auto& member : models->dynamics) {
    const DynamicsModel* dyn = &member.params;
    e.models.push_back(TransitionModelFn{
        [dyn](const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
          return predict_next_states(*dyn, s, a);
        },
        [dyn, clamp](const Eigen::MatrixXd& s) { return predict_termination(*dyn, s, clamp); }});
  }
  for (const auto& member : models->rewards) {
    const MlpParams* reward = &member.params;
    e.rewards.push_back([reward](const Eigen::MatrixXd& s, const Eigen::MatrixXd& a,
                                 const Eigen::MatrixXd& s2) {
      return predict_rewards(*reward, s, a, s2);
    });
  }
  return e;
}

AgentConfig agent_config_for(const TrainConfig& config, int state_dim, int action_dim) {
  AgentConfig a;
  a.state_dim = state_dim;
  a.action_dim = action_dim;
  a.critic_hidden = config.hidden;
  a.policy_hidden = config.hidden;
  a.critic_count = config.q_functions;
  a.critic_adam.learning_rate = config.learning_rate;
  a.policy_adam.learning_rate = config.learning_rate;
  a.exploration_probability = config.exploration_probability;
  a.exploration_noise = config.exploration_noise;
  a.actor_uses_ensemble_mean = config.actor_uses_ensemble_mean;
  return a;
}

WorldModelShape model_shape_for(const TrainConfig& config, int state_dim, int action_dim) {
  WorldModelShape s;
  s.state_dim = state_dim;
  s.action_dim = action_dim;
  s.transition_hidden = config.transition_hidden;
  s.termination_hidden = config.model_hidden;
  s.reward_hidden = config.model_hidden;
  return s;
}

namespace detail {

TransitionBatch concat(std::span<const TransitionBatch> parts) {
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.size();
  const auto& first = parts.front();
  TransitionBatch out;
  out.states.resize(first.states.rows(), total);
  out.actions.resize(first.actions.rows(), total);
  out.rewards.resize(total);
  out.next_states.resize(first.next_states.rows(), total);
  out.dones.resize(total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    const Eigen::Index n = p.size();
    out.states.middleCols(at, n) = p.states;
    out.actions.middleCols(at, n) = p.actions;
    out.rewards.segment(at, n) = p.rewards;
    out.next_states.middleCols(at, n) = p.next_states;
    out.dones.segment(at, n) = p.dones;
    at += n;
  }
  return out;
}

PolicyStep policy_update(Agent& agent, const ModelEnsemble* models, const ReplayBuffer& buffer,
                         const TrainConfig& config, Rng& rng) {
  const int L = agent.critic_count();
  const auto B = static_cast<std::size_t>(config.batch_size);
  std::vector<TransitionBatch> batches;
  batches.reserve(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) batches.push_back(buffer.sample(B, rng));

  PolicyStep step;
  const ExpansionEnsembles ens =
      make_expansion_ensembles(config.uses_model() ? models : nullptr, agent);
  if (config.uses_tdk()) {
    for (int l = 0; l < L; ++l) {
      const auto& batch = batches[static_cast<std::size_t>(l)];
      ExpansionEnsembles single;
      single.policy = ens.policy;
      single.models = {ens.models[static_cast<std::size_t>(l) % ens.models.size()]};
      const RolloutBundle bundle = rollout(single, batch, config.horizon, config.discount);
      const MlpParams* live = &agent.critics[static_cast<std::size_t>(l)].live;
      const ValueFn live_q = [live](const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
        return q_values(*live, s, a);
      };
      const TdkTerms terms =
          tdk_losses(bundle, batch, ens.rewards[static_cast<std::size_t>(l) % ens.rewards.size()],
                     ens.q_functions[static_cast<std::size_t>(l)], live_q);
      const CriticUpdateReport r = tdk_critic_update(agent, l, terms);
      step.critic_loss += r.loss / L;
      step.skipped += r.skipped;
      step.rejected += r.rejected;
    }
    // Every term regresses on a horizon-H expansion target.
    step.usage = 1.0;
  } else {
    const TransitionBatch joint = concat(batches);
    const BatchTargets targets =
        expansion_targets(ens, joint, config.effective_horizon(), config.discount,
                          config.weighting());
    for (int l = 0; l < L; ++l) {
      const auto& batch = batches[static_cast<std::size_t>(l)];
      const CriticUpdateReport r = critic_fit(
          agent, l, batch.states, batch.actions,
          targets.targets.segment(static_cast<Eigen::Index>(l) * batch.size(), batch.size()));
      step.critic_loss += r.loss / L;
      step.skipped += r.skipped;
      step.rejected += r.rejected;
    }
    step.usage = model_usage(targets.weights);
    step.fallbacks = targets.fallbacks;
  }
  step.actor_loss = actor_update(agent, batches.front().states);
  return step;
}

std::string timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

Artifacts::Artifacts(const RunOutput& output, const TrainConfig& config, std::string mode)
    : output_(output), config_(config), mode_(std::move(mode)), started_(timestamp_now()) {
  if (output_.directory.empty()) return;
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(output_.directory) / "checkpoints");
  metrics_.open(fs::path(output_.directory) / "metrics.csv");
  if (!metrics_) throw std::runtime_error("artifacts: cannot write metrics.csv");
  write_metrics_header(metrics_);
  metrics_.flush();
  write_manifest({});
}

void Artifacts::row(const MetricsRow& row) {
  if (!metrics_.is_open()) return;
  write_metrics_row(metrics_, row);
  metrics_.flush();
}

namespace {

void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& body) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("artifacts: cannot write '" + tmp + "'");
    body(out);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void Artifacts::checkpoint(const Agent& agent, const ModelEnsemble* models) {
  if (output_.directory.empty()) return;
  const auto dir = std::filesystem::path(output_.directory) / "checkpoints";
  write_atomically(dir / "agent.txt", [&](std::ostream& out) { write_agent(out, agent); });
  if (models != nullptr) {
    write_atomically(dir / "models.txt",
                     [&](std::ostream& out) { write_model_ensemble(out, *models); });
  }
}

void Artifacts::write_manifest(const std::map<std::string, std::string>& extra) {
  if (output_.directory.empty()) return;
  const auto path = std::filesystem::path(output_.directory) / "manifest.txt";
  write_atomically(path, [&](std::ostream& out) {
    out << "# resolved run configuration; loadable with --config\n";
    write_config(out, config_);
    out << "run.version = " << output_.version << '\n';
    out << "run.mode = " << mode_ << '\n';
    out << "run.metrics = metrics.csv\n";
    out << "run.checkpoints = checkpoints/agent.txt checkpoints/models.txt\n";
    out << "run.started = " << started_ << '\n';
    for (const auto& [key, value] : extra) out << "run." << key << " = " << value << '\n';
  });
}

void Artifacts::finish(std::map<std::string, std::string> extra) {
  extra["finished"] = timestamp_now();
  write_manifest(extra);
}

void Artifacts::dump_failure(const std::string& message) {
  if (output_.directory.empty()) return;
  std::ofstream out(std::filesystem::path(output_.directory) / "failure.txt");
  out << message << '\n';
}

void Averager::add(double v) {
  total += v;
  ++count;
}

std::optional<double> Averager::take() {
  if (count == 0) return std::nullopt;
  const double mean = total / count;
  total = 0.0;
  count = 0;
  return mean;
}

long updates_due(long frames_after_warmup, double per_frame) {
  if (frames_after_warmup <= 0) return 0;
  return static_cast<long>(
      std::floor(static_cast<long double>(frames_after_warmup) * per_frame + 1e-9L));
}

std::optional<double> value_error_for(const TrainConfig& config, const Agent& agent) {
  if (config.environment != "chain") return std::nullopt;
  return chain_value_error(agent, ChainEnv(), config.discount);
}

}  // namespace detail

TrainResult run_training(const TrainConfig& requested, const RunOutput& output) {
  using namespace detail;
  const TrainConfig config = requested.resolved();
  config.validate();

  auto env = make_environment(config.environment, Rng::stream(config.seed, kEnvStream).next_u64());
  const std::uint64_t eval_seed = Rng::stream(config.seed, kEvalStream).next_u64();
  const int state_dim = env->state_dim();
  const int action_dim = env->action_dim();

  Rng agent_rng = Rng::stream(config.seed, kAgentInitStream);
  Rng model_init_rng = Rng::stream(config.seed, kModelInitStream);
  Rng explore_rng = Rng::stream(config.seed, kExploreStream);
  Rng sample_rng = Rng::stream(config.seed, kPolicySampleStream);
  Rng model_sample_rng = Rng::stream(config.seed, kModelSampleStream);
  Rng warmup_rng = Rng::stream(config.seed, kWarmupStream);
  Rng random_eval_rng = Rng::stream(config.seed, kRandomEvalStream);

  Agent agent = make_agent(agent_config_for(config, state_dim, action_dim), agent_rng);
  std::optional<ModelEnsemble> models;
  if (config.uses_model()) {
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    models = make_model_ensemble(model_shape_for(config, state_dim, action_dim),
                                 config.transition_models, config.reward_models, adam,
                                 model_init_rng);
  }
  const ModelEnsemble* model_ptr = models ? &*models : nullptr;

  Artifacts artifacts(output, config, "sync");
  TrainResult result;
  result.config = config;

  auto fresh_eval_env = [&]() { return make_environment(config.environment, eval_seed); };
  {
    auto e = fresh_eval_env();
    result.random_score = random_policy_score(*e, config.eval_episodes, random_eval_rng);
  }

  ReplayBuffer buffer(static_cast<std::size_t>(config.buffer_capacity));
  Eigen::VectorXd state = env->reset();
  auto collect = [&](const Eigen::VectorXd& action) {
    Transition t = env->step(action);
    state = env->episode_over() ? env->reset() : t.next_state;
    buffer.add(std::move(t));
    ++result.frames;
  };

  for (long f = 0; f < config.warmup_frames; ++f) {
    Eigen::VectorXd a(action_dim);
    for (int i = 0; i < action_dim; ++i) a(i) = warmup_rng.uniform(-1.0, 1.0);
    collect(a);
  }

  Averager critic_avg, model_avg, usage_avg;
  auto halt = [&](const std::string& what) {
    const std::string message = "non-finite " + what + " at policy update " +
                                std::to_string(result.policy_updates) + ", frame " +
                                std::to_string(result.frames);
    artifacts.dump_failure(message);
    artifacts.checkpoint(agent, model_ptr);
    artifacts.finish({{"error", message}});
    throw std::runtime_error("run_training: " + message);
  };

  if (models && config.pretrain_updates > 0) {
    const double loss = train_model_ensemble(*models, buffer, static_cast<int>(config.pretrain_updates),
                                             static_cast<std::size_t>(config.model_batch_size),
                                             model_sample_rng);
    if (!std::isfinite(loss)) halt("model loss");
    model_avg.add(loss);
    result.model_updates += config.pretrain_updates;
  }

  auto log_row = [&]() {
    auto e = fresh_eval_env();
    MetricsRow row;
    row.step = result.policy_updates;
    row.frames = result.frames;
    row.score = evaluate(agent.policy, *e, config.eval_episodes);
    row.value_error = value_error_for(config, agent);
    row.critic_loss = critic_avg.take();
    row.model_loss = model_avg.take();
    row.model_usage = usage_avg.take();
    result.final_score = *row.score;
    result.metrics.push_back(row);
    artifacts.row(row);
  };
  log_row();

  for (long f = config.warmup_frames; f < config.total_frames; ++f) {
    collect(select_action(agent, state, true, explore_rng));
    const long after_warmup = result.frames - config.warmup_frames;
    if (models) {
      const long due = updates_due(after_warmup, config.model_updates_per_frame);
      const long done = result.model_updates - config.pretrain_updates;
      if (due > done) {
        const double loss = train_model_ensemble(*models, buffer, static_cast<int>(due - done),
                                                 static_cast<std::size_t>(config.model_batch_size),
                                                 model_sample_rng);
        if (!std::isfinite(loss)) halt("model loss");
        model_avg.add(loss);
        result.model_updates += due - done;
      }
    }
    const long due = updates_due(after_warmup, config.updates_per_frame);
    while (result.policy_updates < due) {
      const PolicyStep s = policy_update(agent, model_ptr, buffer, config, sample_rng);
      if (!std::isfinite(s.critic_loss)) halt("critic loss");
      if (!std::isfinite(s.actor_loss)) halt("actor loss");
      ++result.policy_updates;
      critic_avg.add(s.critic_loss);
      usage_avg.add(s.usage);
      result.update_usage.push_back(s.usage);
      if (result.policy_updates % config.checkpoint_interval == 0) refresh_targets(agent);
      if (result.policy_updates % config.eval_interval == 0) {
        log_row();
        artifacts.checkpoint(agent, model_ptr);
      }
    }
  }
  if (result.metrics.back().step != result.policy_updates) log_row();
  artifacts.checkpoint(agent, model_ptr);
  artifacts.finish({{"policy_updates", std::to_string(result.policy_updates)},
                    {"frames", std::to_string(result.frames)}});
  return result;
}

}  // namespace steve
