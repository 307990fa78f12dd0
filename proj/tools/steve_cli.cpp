// steve: command-line entry point for the toy, training, ablation and
// evaluation experiments. Exit status: 0 success, 1 usage or configuration
// error, 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "steve/tabular_toy.hpp"
#include "steve/trainer.hpp"

#ifndef STEVE_VERSION
#define STEVE_VERSION "dev"
#endif
#ifndef STEVE_CONFIG_DIR
#define STEVE_CONFIG_DIR "configs"
#endif

using namespace steve;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

// Thrown for bad flags or configuration; maps to exit status 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainFlags {
  std::string config;
  std::optional<std::string> profile;
  std::optional<std::string> strategy;
  std::optional<int> horizon;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::optional<long> frames;
  bool async = false;
  std::vector<std::string> overrides;  // key=value
  std::string out;
};

// A bare name such as `desk_pointmass_steve` resolves to
// <config dir>/desk_pointmass_steve.cfg; STEVE_CONFIG_DIR overrides the
// built-in directory.
fs::path resolve_config(const std::string& name) {
  if (fs::exists(name)) return name;
  if (name.find('/') == std::string::npos) {
    const char* env = std::getenv("STEVE_CONFIG_DIR");
    const fs::path dir = env ? fs::path(env) : fs::path(STEVE_CONFIG_DIR);
    for (const fs::path candidate : {dir / name, dir / (name + ".cfg")}) {
      if (fs::exists(candidate)) return candidate;
    }
  }
  throw UsageError("config file not found: " + name);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Drops `profile = ...` lines so that a --profile flag wins over the file.
std::string without_profile(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    const auto start = line.find_first_not_of(" \t");
    if (start != std::string::npos && line.compare(start, 7, "profile") == 0) {
      const auto rest = line.find_first_not_of(" \t", start + 7);
      if (rest != std::string::npos && line[rest] == '=') continue;
    }
    out += line + '\n';
  }
  return out;
}

// Profile, then config file, then flags; validated before returning.
TrainConfig build_config(const TrainFlags& f) {
  try {
    TrainConfig c = TrainConfig::for_profile(f.profile.value_or("desk"));
    if (!f.config.empty()) {
      std::string text = read_file(resolve_config(f.config));
      if (f.profile) text = without_profile(text);
      std::istringstream in(text);
      apply_config_text(c, in);
    }
    if (f.strategy) c.set("strategy", *f.strategy);
    if (f.horizon) c.horizon = *f.horizon;
    if (f.lambda) c.lambda = *f.lambda;
    if (f.seed) c.seed = *f.seed;
    if (f.frames) c.total_frames = *f.frames;
    if (f.async) c.async = true;
    for (const auto& kv : f.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.resolved().validate();
    return c;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void add_train_flags(CLI::App& cmd, TrainFlags& f) {
  cmd.add_option("--config", f.config, "Config file path or name under configs/");
  cmd.add_option("--profile", f.profile, "Base profile")->check(CLI::IsMember({"desk", "paper"}));
  cmd.add_option("--strategy", f.strategy, "Target strategy");
  cmd.add_option("--horizon", f.horizon, "Rollout horizon H");
  cmd.add_option("--lambda", f.lambda, "Lambda for the tdlambda strategy");
  cmd.add_option("--seed", f.seed, "Run seed");
  cmd.add_option("--frames", f.frames, "Total environment frames");
  cmd.add_flag("--async", f.async, "Asynchronous actors and learners");
  cmd.add_option("--set", f.overrides, "Extra config override key=value (repeatable)");
  cmd.add_option("--out", f.out, "Output directory")->required();
}

TrainResult execute(const TrainConfig& c, const fs::path& dir) {
  const RunOutput output{dir.string(), STEVE_VERSION};
  return c.async ? run_async(c, output) : run_training(c, output);
}

void report(const std::string& label, const TrainResult& r, const fs::path& dir) {
  std::printf("%s: %ld policy updates, %ld frames, random score %.3f, final score %.3f -> %s\n",
              label.c_str(), r.policy_updates, r.frames, r.random_score, r.final_score,
              (dir / "metrics.csv").string().c_str());
  if (!r.error.empty()) throw std::runtime_error(label + ": " + r.error);
}

int cmd_train(const TrainFlags& f) {
  const TrainConfig c = build_config(f);
  const fs::path dir = f.out;
  report(c.strategy, execute(c, dir), dir);
  return kOk;
}

struct AblateFlags {
  TrainFlags train;
  std::vector<int> horizons;
};

int cmd_ablate(const AblateFlags& f) {
  const TrainConfig base = build_config(f.train);
  std::vector<std::pair<std::string, TrainConfig>> runs;
  if (!f.horizons.empty()) {
    for (int h : f.horizons) {
      TrainConfig c = base;
      c.horizon = h;
      runs.emplace_back(c.strategy + "_h" + std::to_string(h), c);
    }
  } else {
    const std::vector<std::pair<std::string, std::string>> variants{
        {"td", "td"},       {"mve", "mve"},       {"ensemble_mve", "ensemble_mve"},
        {"mean", "mean"},   {"tdl25", "tdlambda"}, {"tdl75", "tdlambda"},
        {"steve", "steve"}, {"cov_steve", "cov_steve"}};
    for (const auto& [label, strategy] : variants) {
      TrainConfig c = base;
      c.strategy = strategy;
      if (label == "tdl25") c.lambda = 0.25;
      if (label == "tdl75") c.lambda = 0.75;
      runs.emplace_back(label, c);
    }
  }
  // Every variant is checked before anything runs.
  for (const auto& [label, c] : runs) {
    try {
      c.resolved().validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(label + ": " + e.what());
    }
  }
  for (const auto& [label, c] : runs) {
    const fs::path dir = fs::path(f.train.out) / label;
    report(label, execute(c, dir), dir);
  }
  return kOk;
}

struct ToyFlags {
  std::uint64_t seed = 0;
  int horizon = 5;
  std::optional<std::string> strategy;
  double noise = 0.10;
  int max_updates = 30000;
  std::string out;
};

void write_toy_csv(const fs::path& path, const ToyRun& run) {
  std::vector<MetricsRow> rows;
  rows.reserve(run.value_errors.size());
  for (std::size_t k = 0; k < run.value_errors.size(); ++k) {
    MetricsRow row;
    row.step = static_cast<long>(k) + 1;
    row.value_error = run.value_errors[k];
    row.model_usage = run.model_usage[k];
    rows.push_back(row);
  }
  write_metrics_csv(path.string(), rows);
}

int cmd_toy(const ToyFlags& f) {
  std::vector<std::string> strategies{"td", "mve", "steve"};
  if (f.strategy) {
    try {
      parse_weighting(*f.strategy);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("toy: ") + e.what());
    }
    strategies = {*f.strategy};
  }
  if (f.horizon < 0) throw UsageError("toy: horizon must be >= 0");
  if (f.noise < 0.0 || f.noise > 1.0) throw UsageError("toy: noise must lie in [0, 1]");
  if (f.max_updates < 1) throw UsageError("toy: max-updates must be positive");

  const fs::path dir = f.out;
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  manifest << "run.version = " << STEVE_VERSION << '\n'
           << "toy.seed = " << f.seed << '\n'
           << "toy.horizon = " << f.horizon << '\n'
           << "toy.noise = " << f.noise << '\n'
           << "toy.max_updates = " << f.max_updates << '\n';
  for (const auto& name : strategies) {
    for (const auto mode : {ToyModel::Mode::kOracle, ToyModel::Mode::kNoisy}) {
      ToyConfig c;
      c.strategy.kind = parse_weighting(name);
      c.horizon = f.horizon;
      c.model_mode = mode;
      c.noise_probability = f.noise;
      c.max_updates = f.max_updates;
      c.seed = f.seed;
      const ToyRun run = run_toy(c);
      const std::string mode_name = mode == ToyModel::Mode::kOracle ? "oracle" : "noisy";
      const std::string file = "toy_" + name + "_" + mode_name + ".csv";
      write_toy_csv(dir / file, run);
      manifest << "toy.csv = " << file << '\n';
      const auto hit = run.first_below(1.0);
      std::printf("%-6s %-6s final value error %.4g, below 1.0 after %s updates -> %s\n",
                  name.c_str(), mode_name.c_str(), run.value_errors.back(),
                  hit ? std::to_string(*hit).c_str() : "never", (dir / file).string().c_str());
    }
  }
  return kOk;
}

struct EvalFlags {
  std::string run;
  std::optional<int> episodes;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_eval(const EvalFlags& f) {
  const fs::path run = f.run;
  TrainConfig c;
  try {
    c = load_config((run / "manifest.txt").string());
  } catch (const std::exception& e) {
    throw UsageError(std::string("eval: ") + e.what());
  }
  const int episodes = f.episodes.value_or(c.eval_episodes);
  if (episodes < 1) throw UsageError("eval: episodes must be >= 1");
  std::ifstream in(run / "checkpoints" / "agent.txt");
  if (!in) throw UsageError("eval: no checkpoint in " + run.string());
  auto env = make_environment(c.environment, f.seed.value_or(c.seed));
  const Agent agent =
      read_agent(in, agent_config_for(c.resolved(), env->state_dim(), env->action_dim()));
  const double score = evaluate(agent.policy, *env, episodes);
  std::printf("score %.6f over %d episodes\n", score, episodes);
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    std::ofstream out(fs::path(f.out) / "eval.csv");
    out.precision(17);
    out << "run,episodes,score\n" << run.string() << ',' << episodes << ',' << score << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based value expansion experiments"};
  app.set_version_flag("--version", STEVE_VERSION);
  app.require_subcommand(1);

  ToyFlags toy;
  auto* toy_cmd = app.add_subcommand("toy", "Tabular chain toy: TD, MVE and STEVE, oracle and noisy");
  toy_cmd->add_option("--seed", toy.seed, "Seed");
  toy_cmd->add_option("--horizon", toy.horizon, "Rollout horizon H");
  toy_cmd->add_option("--strategy", toy.strategy, "Run only this strategy");
  toy_cmd->add_option("--noise", toy.noise, "Noisy-model jump probability");
  toy_cmd->add_option("--max-updates", toy.max_updates, "Updates per run");
  toy_cmd->add_option("--out", toy.out, "Output directory")->required();

  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "Train one agent");
  add_train_flags(*train_cmd, train);

  AblateFlags ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the strategy set or a horizon sweep");
  add_train_flags(*ablate_cmd, ablate.train);
  ablate_cmd->add_option("--horizons", ablate.horizons, "Horizon sweep, e.g. 1,3,5")
      ->delimiter(',');

  EvalFlags eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a run's latest checkpoint");
  eval_cmd->add_option("--run", eval.run, "Run directory")->required();
  eval_cmd->add_option("--episodes", eval.episodes, "Episodes (default: the run's setting)");
  eval_cmd->add_option("--seed", eval.seed, "Environment seed (default: the run's seed)");
  eval_cmd->add_option("--out", eval.out, "Directory for eval.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*toy_cmd) return cmd_toy(toy);
    if (*train_cmd) return cmd_train(train);
    if (*ablate_cmd) return cmd_ablate(ablate);
    return cmd_eval(eval);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return kRuntime;
  }
}
