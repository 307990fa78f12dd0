#include "steve/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace steve {

namespace {

const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names{"td",   "mve",      "ensemble_mve", "mean",
                                              "tdlambda", "steve", "cov_steve"};
  return names;
}

std::string trim(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = text.find_last_not_of(" \t\r");
  return text.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: invalid value '" + value + "' for '" + key + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* begin = value.data();
  const char* end = begin + value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value);
  return out;
}

// Integers may be written in scientific notation (1e5) as long as they are
// whole.
long parse_count(const std::string& key, const std::string& value) {
  const double d = parse_number<double>(key, value);
  const long n = static_cast<long>(d);
  if (static_cast<double>(n) != d) bad_value(key, value);
  return n;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value);
}

std::vector<int> parse_layers(const std::string& key, const std::string& value) {
  std::vector<int> layers;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, 'x')) {
    const long n = parse_count(key, trim(item));
    if (n < 1) bad_value(key, value);
    layers.push_back(static_cast<int>(n));
  }
  if (layers.empty()) bad_value(key, value);
  return layers;
}

std::string layers_text(const std::vector<int>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(layers[i]);
  }
  return out;
}

std::string real_text(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("config: ") + field + " " + what);
}

}  // namespace

bool is_known_strategy(const std::string& name) {
  const auto& names = strategy_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::vector<std::string> known_strategies() { return strategy_names(); }

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.profile = "paper";
  c.batch_size = 512;
  c.model_batch_size = 1024;
  c.buffer_capacity = 1000000;
  c.warmup_frames = 100000;
  c.pretrain_updates = 100000;
  c.updates_per_frame = 4.0;
  c.model_updates_per_frame = 4.0;
  c.checkpoint_interval = 500;
  c.eval_interval = 500;
  c.total_frames = 1000000;
  c.hidden = {128, 128, 128, 128};
  c.model_hidden = {128, 128, 128, 128};
  c.transition_hidden = std::vector<int>(8, 512);
  c.exploration_probability = 0.05;
  c.actor_uses_ensemble_mean = false;
  c.actors = 8;
  return c;
}

TrainConfig TrainConfig::for_profile(const std::string& profile) {
  if (profile == "desk") return desk();
  if (profile == "paper") return paper();
  throw std::invalid_argument("config: unknown profile '" + profile + "'");
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "profile") {
    TrainConfig fresh = for_profile(value);
    fresh.environment = environment;
    fresh.strategy = strategy;
    fresh.seed = seed;
    *this = fresh;
  } else if (key == "environment") {
    if (value != "pointmass" && value != "chain") bad_value(key, value);
    environment = value;
  } else if (key == "strategy") {
    if (!is_known_strategy(value)) bad_value(key, value);
    strategy = value;
  } else if (key == "horizon") {
    horizon = static_cast<int>(parse_count(key, value));
  } else if (key == "discount") {
    discount = parse_number<double>(key, value);
  } else if (key == "lambda") {
    lambda = parse_number<double>(key, value);
  } else if (key == "variance_floor") {
    variance_floor = parse_number<double>(key, value);
  } else if (key == "transition_models") {
    transition_models = static_cast<int>(parse_count(key, value));
  } else if (key == "reward_models") {
    reward_models = static_cast<int>(parse_count(key, value));
  } else if (key == "q_functions") {
    q_functions = static_cast<int>(parse_count(key, value));
  } else if (key == "batch_size") {
    batch_size = static_cast<int>(parse_count(key, value));
  } else if (key == "model_batch_size") {
    model_batch_size = static_cast<int>(parse_count(key, value));
  } else if (key == "buffer_capacity") {
    buffer_capacity = parse_count(key, value);
  } else if (key == "warmup_frames") {
    warmup_frames = parse_count(key, value);
  } else if (key == "pretrain_updates") {
    pretrain_updates = parse_count(key, value);
  } else if (key == "updates_per_frame") {
    updates_per_frame = parse_number<double>(key, value);
  } else if (key == "model_updates_per_frame") {
    model_updates_per_frame = parse_number<double>(key, value);
  } else if (key == "checkpoint_interval") {
    checkpoint_interval = parse_count(key, value);
  } else if (key == "eval_interval") {
    eval_interval = parse_count(key, value);
  } else if (key == "eval_episodes") {
    eval_episodes = static_cast<int>(parse_count(key, value));
  } else if (key == "total_frames") {
    total_frames = parse_count(key, value);
  } else if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "hidden") {
    hidden = parse_layers(key, value);
  } else if (key == "model_hidden") {
    model_hidden = parse_layers(key, value);
  } else if (key == "transition_hidden") {
    transition_hidden = parse_layers(key, value);
  } else if (key == "learning_rate") {
    learning_rate = parse_number<double>(key, value);
  } else if (key == "exploration_probability") {
    exploration_probability = parse_number<double>(key, value);
  } else if (key == "exploration_noise") {
    exploration_noise = parse_number<double>(key, value);
  } else if (key == "actor_uses_ensemble_mean") {
    actor_uses_ensemble_mean = parse_bool(key, value);
  } else if (key == "async") {
    async = parse_bool(key, value);
  } else if (key == "actors") {
    actors = static_cast<int>(parse_count(key, value));
  } else if (key == "gate_updates") {
    gate_updates = parse_bool(key, value);
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

void TrainConfig::validate() const {
  require(environment == "pointmass" || environment == "chain", "environment", "is unknown");
  require(profile == "desk" || profile == "paper", "profile", "is unknown");
  require(is_known_strategy(strategy), "strategy", "is unknown");
  require(horizon >= 0, "horizon", "must be >= 0");
  require(strategy != "mve" || horizon >= 1, "horizon", "must be >= 1 for mve");
  require(discount >= 0.0 && discount < 1.0, "discount", "must lie in [0, 1)");
  require(lambda > 0.0 && lambda <= 1.0, "lambda", "must lie in (0, 1]");
  require(variance_floor > 0.0, "variance_floor", "must be positive");
  require(transition_models >= 1, "transition_models", "must be positive");
  require(reward_models >= 1, "reward_models", "must be positive");
  require(q_functions >= 1, "q_functions", "must be positive");
  require(batch_size >= 1, "batch_size", "must be positive");
  require(model_batch_size >= 1, "model_batch_size", "must be positive");
  require(buffer_capacity >= 1, "buffer_capacity", "must be positive");
  require(warmup_frames >= 1, "warmup_frames", "must be positive");
  require(warmup_frames >= batch_size, "warmup_frames", "must cover one minibatch");
  require(!uses_model() || warmup_frames >= model_batch_size, "warmup_frames",
          "must cover one model minibatch");
  require(buffer_capacity >= warmup_frames, "buffer_capacity", "must hold the warmup frames");
  require(pretrain_updates >= 0, "pretrain_updates", "must be >= 0");
  require(updates_per_frame > 0.0, "updates_per_frame", "must be positive");
  require(model_updates_per_frame > 0.0, "model_updates_per_frame", "must be positive");
  require(checkpoint_interval >= 1, "checkpoint_interval", "must be positive");
  require(eval_interval >= 1, "eval_interval", "must be positive");
  require(eval_episodes >= 1, "eval_episodes", "must be positive");
  require(total_frames >= warmup_frames, "total_frames", "must be >= warmup_frames");
  require(learning_rate > 0.0, "learning_rate", "must be positive");
  require(exploration_probability >= 0.0 && exploration_probability <= 1.0,
          "exploration_probability", "must lie in [0, 1]");
  require(exploration_noise >= 0.0, "exploration_noise", "must be >= 0");
  require(actors >= 1, "actors", "must be positive");
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig c = *this;
  if (c.strategy == "mve") {
    c.transition_models = 1;
    c.reward_models = 1;
    c.q_functions = 1;
  }
  return c;
}

WeightingStrategy TrainConfig::weighting() const {
  WeightingStrategy w;
  if (strategy == "td") {
    w = WeightingStrategy::td();
  } else if (strategy == "mve" || strategy == "ensemble_mve") {
    w = WeightingStrategy::mve();
  } else if (strategy == "mean") {
    w = WeightingStrategy::mean();
  } else if (strategy == "tdlambda") {
    w = WeightingStrategy::td_lambda(lambda);
  } else if (strategy == "cov_steve") {
    w = WeightingStrategy::cov_steve();
  } else {
    w = WeightingStrategy::steve();
  }
  w.variance_floor = variance_floor;
  return w;
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"environment", environment},
      {"profile", profile},
      {"strategy", strategy},
      {"horizon", std::to_string(horizon)},
      {"discount", real_text(discount)},
      {"lambda", real_text(lambda)},
      {"variance_floor", real_text(variance_floor)},
      {"transition_models", std::to_string(transition_models)},
      {"reward_models", std::to_string(reward_models)},
      {"q_functions", std::to_string(q_functions)},
      {"batch_size", std::to_string(batch_size)},
      {"model_batch_size", std::to_string(model_batch_size)},
      {"buffer_capacity", std::to_string(buffer_capacity)},
      {"warmup_frames", std::to_string(warmup_frames)},
      {"pretrain_updates", std::to_string(pretrain_updates)},
      {"updates_per_frame", real_text(updates_per_frame)},
      {"model_updates_per_frame", real_text(model_updates_per_frame)},
      {"checkpoint_interval", std::to_string(checkpoint_interval)},
      {"eval_interval", std::to_string(eval_interval)},
      {"eval_episodes", std::to_string(eval_episodes)},
      {"total_frames", std::to_string(total_frames)},
      {"seed", std::to_string(seed)},
      {"hidden", layers_text(hidden)},
      {"model_hidden", layers_text(model_hidden)},
      {"transition_hidden", layers_text(transition_hidden)},
      {"learning_rate", real_text(learning_rate)},
      {"exploration_probability", real_text(exploration_probability)},
      {"exploration_noise", real_text(exploration_noise)},
      {"actor_uses_ensemble_mean", actor_uses_ensemble_mean ? "true" : "false"},
      {"async", async ? "true" : "false"},
      {"actors", std::to_string(actors)},
      {"gate_updates", gate_updates ? "true" : "false"},
  };
}

void apply_config_text(TrainConfig& config, std::istream& in) {
  std::string line;
  int number = 0;
  // `profile` replaces every default, so it is applied before other keys
  // regardless of where it appears.
  std::vector<std::pair<std::string, std::string>> entries;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(number) +
                                  ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.rfind("run.", 0) == 0) continue;
    if (key == "profile") {
      entries.insert(entries.begin(), {key, value});
    } else {
      entries.emplace_back(key, value);
    }
  }
  for (const auto& [key, value] : entries) config.set(key, value);
}

TrainConfig load_config(const std::string& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  TrainConfig config = base;
  apply_config_text(config, in);
  return config;
}

void write_config(std::ostream& out, const TrainConfig& config) {
  // Profile first so that reading the text back applies it before the rest.
  const auto fields = config.to_map();
  out << "profile = " << fields.at("profile") << '\n';
  for (const auto& [key, value] : fields) {
    if (key != "profile") out << key << " = " << value << '\n';
  }
}

}  // namespace steve
