#ifndef STEVE_TRAINER_INTERNAL_HPP
#define STEVE_TRAINER_INTERNAL_HPP

// Pieces shared by the synchronous and asynchronous runners.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "steve/trainer.hpp"

namespace steve::detail {

// Rng::stream ids derived from the run seed.
enum : std::uint64_t {
  kAgentInitStream = 0,
  kModelInitStream = 1,
  kExploreStream = 2,
  kPolicySampleStream = 3,
  kModelSampleStream = 4,
  kWarmupStream = 5,
  kRandomEvalStream = 6,
  kEnvStream = 7,
  kEvalStream = 8,
  kActorStreamBase = 1000,
};

TransitionBatch concat(std::span<const TransitionBatch> parts);

struct PolicyStep {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double usage = 0.0;
  std::size_t skipped = 0;
  std::size_t rejected = 0;
  std::size_t fallbacks = 0;
};

// One critic step per member on its own minibatch, then one actor step.
PolicyStep policy_update(Agent& agent, const ModelEnsemble* models, const ReplayBuffer& buffer,
                         const TrainConfig& config, Rng& rng);

std::string timestamp_now();

// Run directory writer; a no-op when the output directory is empty.
class Artifacts {
 public:
  Artifacts(const RunOutput& output, const TrainConfig& config, std::string mode);

  void row(const MetricsRow& row);
  void checkpoint(const Agent& agent, const ModelEnsemble* models);
  void finish(std::map<std::string, std::string> extra);
  void dump_failure(const std::string& message);

 private:
  void write_manifest(const std::map<std::string, std::string>& extra);

  RunOutput output_;
  TrainConfig config_;
  std::string mode_;
  std::string started_;
  std::ofstream metrics_;
};

struct Averager {
  double total = 0.0;
  long count = 0;
  void add(double v);
  std::optional<double> take();
};

// floor(frames_after_warmup * per_frame), robust to representation error.
long updates_due(long frames_after_warmup, double per_frame);

std::optional<double> value_error_for(const TrainConfig& config, const Agent& agent);

}  // namespace steve::detail

#endif  // STEVE_TRAINER_INTERNAL_HPP
