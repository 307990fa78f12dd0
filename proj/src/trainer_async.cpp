#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "steve/trainer.hpp"
#include "trainer_internal.hpp"

namespace steve {

namespace {

// Bounded FIFO; push blocks while full. Closing wakes every waiter: pushes
// fail and pops drain what is left.
class TransitionQueue {
 public:
  explicit TransitionQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(Transition t) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(t));
    not_empty_.notify_one();
    return true;
  }

  bool pop(Transition& out) {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return false;
    out = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return true;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<Transition> items_;
  bool closed_ = false;
};

// Latest published immutable value plus a version counter.
template <class T>
class Snapshot {
 public:
  void publish(T value) {
    auto ptr = std::make_shared<const T>(std::move(value));
    std::lock_guard lock(mutex_);
    value_ = std::move(ptr);
    ++version_;
  }
  std::shared_ptr<const T> get() const {
    std::lock_guard lock(mutex_);
    return value_;
  }
  std::uint64_t version() const {
    std::lock_guard lock(mutex_);
    return version_;
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const T> value_;
  std::uint64_t version_ = 0;
};

class Clock {
 public:
  Clock() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Shared progress counters; waiters are woken on every change.
struct Progress {
  std::mutex mutex;
  std::condition_variable changed;
  long ingested = 0;
  bool collection_done = false;
  bool stop = false;
  std::string error;

  void fail(const std::string& what) {
    std::lock_guard lock(mutex);
    if (error.empty()) error = what;
    stop = true;
    changed.notify_all();
  }
  void notify() {
    std::lock_guard lock(mutex);
    changed.notify_all();
  }
  // Waits until `ready` holds or the run stops; returns false on stop.
  template <class Pred>
  bool wait(Pred ready) {
    std::unique_lock lock(mutex);
    changed.wait(lock, [&] { return stop || ready(); });
    return !stop;
  }
};

}  // namespace

TrainResult run_async(const TrainConfig& requested, const RunOutput& output,
                      const AsyncHooks& hooks) {
  using namespace detail;
  const TrainConfig config = requested.resolved();
  config.validate();

  auto probe = make_environment(config.environment, 0);
  const int state_dim = probe->state_dim();
  const int action_dim = probe->action_dim();
  const std::uint64_t eval_seed = Rng::stream(config.seed, kEvalStream).next_u64();

  Rng agent_rng = Rng::stream(config.seed, kAgentInitStream);
  Rng model_init_rng = Rng::stream(config.seed, kModelInitStream);
  Agent agent = make_agent(agent_config_for(config, state_dim, action_dim), agent_rng);

  std::optional<ModelEnsemble> model_training;
  if (config.uses_model()) {
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    model_training = make_model_ensemble(model_shape_for(config, state_dim, action_dim),
                                         config.transition_models, config.reward_models, adam,
                                         model_init_rng);
  }

  Artifacts artifacts(output, config, "async");
  TrainResult result;
  result.config = config;
  {
    auto e = make_environment(config.environment, eval_seed);
    Rng rng = Rng::stream(config.seed, kRandomEvalStream);
    result.random_score = random_policy_score(*e, config.eval_episodes, rng);
  }

  const Clock clock;
  ReplayBuffer buffer(static_cast<std::size_t>(config.buffer_capacity));
  TransitionQueue queue(static_cast<std::size_t>(std::max(64, config.batch_size)));
  Progress progress;
  Snapshot<MlpParams> policy_snapshot;
  Snapshot<ModelEnsemble> model_snapshot;
  policy_snapshot.publish(agent.policy);

  std::atomic<long> next_frame{0};
  std::atomic<int> live_actors{config.actors};
  std::vector<long> actor_frames(static_cast<std::size_t>(config.actors), 0);
  std::atomic<long> model_updates{0};
  std::atomic<double> latest_model_loss{std::nan("")};

  auto guarded = [&](const char* who, auto&& body) {
    return [&, who, body]() mutable {
      try {
        body();
      } catch (const std::exception& e) {
        progress.fail(std::string(who) + ": " + e.what());
        queue.close();
      } catch (...) {
        progress.fail(std::string(who) + ": unknown failure");
        queue.close();
      }
    };
  };

  std::vector<std::thread> threads;
  for (int k = 0; k < config.actors; ++k) {
    threads.emplace_back(guarded("actor", [&, k] {
      auto env = make_environment(
          config.environment, Rng::stream(config.seed, kActorStreamBase + 2 * k).next_u64());
      Rng rng = Rng::stream(config.seed, kActorStreamBase + 2 * k + 1);
      Agent view;
      view.config = agent.config;
      std::uint64_t seen = 0;
      Eigen::VectorXd state = env->reset();
      // The last actor out closes the queue; ingest then drains it.
      struct LastOut {
        std::atomic<int>& live;
        TransitionQueue& queue;
        ~LastOut() {
          if (live.fetch_sub(1) == 1) queue.close();
        }
      } last_out{live_actors, queue};
      while (true) {
        {
          std::lock_guard lock(progress.mutex);
          if (progress.stop) break;
        }
        const long frame = next_frame.fetch_add(1);
        if (frame >= config.total_frames) break;
        if (hooks.before_frame) hooks.before_frame(k, frame);
        Eigen::VectorXd action(action_dim);
        if (frame < config.warmup_frames) {
          for (int i = 0; i < action_dim; ++i) action(i) = rng.uniform(-1.0, 1.0);
        } else {
          if (policy_snapshot.version() != seen) {
            seen = policy_snapshot.version();
            view.policy = *policy_snapshot.get();
          }
          action = select_action(view, state, true, rng);
        }
        Transition t = env->step(action);
        state = env->episode_over() ? env->reset() : t.next_state;
        if (!queue.push(std::move(t))) break;
        ++actor_frames[static_cast<std::size_t>(k)];
      }
    }));
  }

  threads.emplace_back(guarded("ingest", [&] {
    Transition t;
    while (queue.pop(t)) {
      buffer.add(std::move(t));
      {
        std::lock_guard lock(progress.mutex);
        ++progress.ingested;
      }
      progress.changed.notify_all();
    }
    std::lock_guard lock(progress.mutex);
    progress.collection_done = true;
    progress.changed.notify_all();
  }));

  auto warm = [&] { return progress.ingested >= config.warmup_frames || progress.collection_done; };

  if (model_training) {
    threads.emplace_back(guarded("model learner", [&] {
      Rng rng = Rng::stream(config.seed, kModelSampleStream);
      const auto batch = static_cast<std::size_t>(config.model_batch_size);
      if (!progress.wait(warm)) return;
      if (config.pretrain_updates > 0) {
        latest_model_loss = train_model_ensemble(
            *model_training, buffer, static_cast<int>(config.pretrain_updates), batch, rng);
        model_updates += config.pretrain_updates;
      }
      model_snapshot.publish(*model_training);
      long trained = 0;
      while (true) {
        long target = 0;
        bool finished = false;
        {
          std::unique_lock lock(progress.mutex);
          auto ready = [&] {
            target = config.gate_updates
                         ? updates_due(progress.ingested - config.warmup_frames,
                                       config.model_updates_per_frame)
                         : trained + 1;
            return progress.stop || progress.collection_done || target > trained;
          };
          progress.changed.wait(lock, ready);
          if (progress.stop) return;
          finished = progress.collection_done && (!config.gate_updates || target <= trained);
        }
        if (finished) break;
        const double loss = train_model_ensemble(*model_training, buffer, 1, batch, rng);
        if (!std::isfinite(loss)) throw std::runtime_error("non-finite model loss");
        latest_model_loss = loss;
        ++trained;
        ++model_updates;
        if (trained % config.checkpoint_interval == 0) model_snapshot.publish(*model_training);
      }
      model_snapshot.publish(*model_training);
    }));
  }

  // The policy learner runs on the calling thread.
  guarded("policy learner", [&] {
    Rng rng = Rng::stream(config.seed, kPolicySampleStream);
    if (!progress.wait(warm)) return;
    std::shared_ptr<const ModelEnsemble> models;
    if (model_training) {
      if (!progress.wait([&] { return model_snapshot.version() > 0; })) return;
      models = model_snapshot.get();
    }
    Averager critic_avg, usage_avg;
    double last_clock = 0.0;
    auto log_row = [&] {
      auto e = make_environment(config.environment, eval_seed);
      MetricsRow row;
      row.step = result.policy_updates;
      {
        std::lock_guard lock(progress.mutex);
        row.frames = progress.ingested;
      }
      row.score = evaluate(agent.policy, *e, config.eval_episodes);
      row.value_error = value_error_for(config, agent);
      row.critic_loss = critic_avg.take();
      const double ml = latest_model_loss.load();
      if (!std::isnan(ml)) row.model_loss = ml;
      row.model_usage = usage_avg.take();
      last_clock = std::max(last_clock, clock.seconds());
      row.wall_clock_s = last_clock;
      result.final_score = *row.score;
      result.metrics.push_back(row);
      artifacts.row(row);
    };
    log_row();
    while (true) {
      long target = 0;
      bool finished = false;
      {
        std::unique_lock lock(progress.mutex);
        auto ready = [&] {
          target = config.gate_updates ? updates_due(progress.ingested - config.warmup_frames,
                                                     config.updates_per_frame)
                                       : result.policy_updates + 1;
          return progress.stop || progress.collection_done || target > result.policy_updates;
        };
        progress.changed.wait(lock, ready);
        if (progress.stop) return;
        finished = progress.collection_done &&
                   (!config.gate_updates || target <= result.policy_updates);
      }
      if (finished) break;
      const PolicyStep s = policy_update(agent, models.get(), buffer, config, rng);
      if (!std::isfinite(s.critic_loss)) throw std::runtime_error("non-finite critic loss");
      ++result.policy_updates;
      critic_avg.add(s.critic_loss);
      usage_avg.add(s.usage);
      result.update_usage.push_back(s.usage);
      if (result.policy_updates % config.checkpoint_interval == 0) {
        refresh_targets(agent);
        policy_snapshot.publish(agent.policy);
        if (model_training) models = model_snapshot.get();
      }
      if (result.policy_updates % config.eval_interval == 0) {
        log_row();
        artifacts.checkpoint(agent, models.get());
      }
    }
    if (result.metrics.empty() || result.metrics.back().step != result.policy_updates) log_row();
  })();

  // Stops workers when the learner ends early (failure or stop).
  {
    std::lock_guard lock(progress.mutex);
    if (!progress.collection_done) progress.stop = true;
    progress.changed.notify_all();
  }
  queue.close();
  for (auto& t : threads) t.join();

  result.error = progress.error;
  result.frames = progress.ingested;
  result.model_updates = model_updates.load();
  result.actor_frames = actor_frames;

  std::shared_ptr<const ModelEnsemble> final_models = model_snapshot.get();
  if (!result.error.empty()) artifacts.dump_failure(result.error);
  artifacts.checkpoint(agent, final_models.get());
  std::map<std::string, std::string> extra{
      {"policy_updates", std::to_string(result.policy_updates)},
      {"frames", std::to_string(result.frames)}};
  if (!result.error.empty()) extra["error"] = result.error;
  artifacts.finish(extra);
  return result;
}

}  // namespace steve
