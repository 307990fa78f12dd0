#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "steve/trainer.hpp"

using namespace steve;
namespace fs = std::filesystem;

namespace {

// A few hundred frames with tiny networks: seconds per run.
TrainConfig tiny(const std::string& strategy, const std::string& env = "pointmass") {
  TrainConfig c = TrainConfig::desk();
  c.environment = env;
  c.strategy = strategy;
  c.horizon = 2;
  c.transition_models = 2;
  c.reward_models = 2;
  c.q_functions = 2;
  c.batch_size = 16;
  c.model_batch_size = 32;
  c.buffer_capacity = 2000;
  c.warmup_frames = 200;
  c.pretrain_updates = 20;
  c.updates_per_frame = 0.25;
  c.model_updates_per_frame = 0.25;
  c.checkpoint_interval = 10;
  c.eval_interval = 25;
  c.eval_episodes = 1;
  c.total_frames = 400;
  c.hidden = {8};
  c.model_hidden = {8};
  c.transition_hidden = {8};
  c.seed = 5;
  return c;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("steve_test_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// PointMass whose every episode starts on the goal.
class AtGoal final : public Environment {
 public:
  std::string name() const override { return "at_goal"; }
  int state_dim() const override { return inner_.state_dim(); }
  int action_dim() const override { return inner_.action_dim(); }
  Eigen::VectorXd reset() override {
    inner_.reset();
    inner_.set_state(Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d(0.3, -0.2));
    return inner_.observation();
  }
  Transition step(const Eigen::VectorXd& action) override { return inner_.step(action); }
  bool episode_over() const override { return inner_.episode_over(); }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<AtGoal>(*this); }

 private:
  PointMassEnv inner_{1};
};

}  // namespace

TEST_CASE("desk and paper profiles") {
  const TrainConfig d = TrainConfig::desk();
  CHECK(d.profile == "desk");
  CHECK(d.buffer_capacity == 100000);
  CHECK(d.warmup_frames == 2000);
  CHECK(d.pretrain_updates == 2000);
  CHECK(d.batch_size == 64);
  CHECK(d.model_batch_size == 128);
  CHECK(d.checkpoint_interval == 250);
  CHECK(d.eval_interval == 500);
  CHECK(d.hidden == std::vector<int>{64, 64});
  CHECK(d.transition_models == 4);
  CHECK(d.reward_models == 4);
  CHECK(d.q_functions == 4);
  CHECK_NOTHROW(d.validate());

  const TrainConfig p = TrainConfig::paper();
  CHECK(p.profile == "paper");
  CHECK(p.batch_size == 512);
  CHECK(p.buffer_capacity == 1000000);
  CHECK(p.warmup_frames == 100000);
  CHECK(p.pretrain_updates == 100000);
  CHECK(p.updates_per_frame == 4.0);
  CHECK(p.exploration_probability == 0.05);
  CHECK(p.transition_hidden == std::vector<int>(8, 512));
  CHECK_NOTHROW(p.validate());
  CHECK_THROWS_AS(TrainConfig::for_profile("laptop"), std::invalid_argument);
}

TEST_CASE("config keys parse and reject bad input by name") {
  TrainConfig c;
  c.set("horizon", "7");
  c.set("buffer_capacity", "1e5");
  c.set("hidden", "32x16");
  c.set("async", "true");
  c.set("discount", "0.9");
  CHECK(c.horizon == 7);
  CHECK(c.buffer_capacity == 100000);
  CHECK(c.hidden == std::vector<int>{32, 16});
  CHECK(c.async);
  CHECK(c.discount == 0.9);

  auto message = [&](const std::string& key, const std::string& value) {
    try {
      c.set(key, value);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("horizonn", "3").find("horizonn") != std::string::npos);
  CHECK(message("horizon", "2.5").find("horizon") != std::string::npos);
  CHECK(message("strategy", "steve2").find("strategy") != std::string::npos);
  CHECK(message("hidden", "8x0").find("hidden") != std::string::npos);
  CHECK(message("async", "maybe").find("async") != std::string::npos);
}

TEST_CASE("validation names the offending field") {
  auto field_of = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string("valid");
  };
  CHECK(field_of([](TrainConfig& c) { c.horizon = -1; }).find("horizon") != std::string::npos);
  CHECK(field_of([](TrainConfig& c) { c.discount = 1.0; }).find("discount") != std::string::npos);
  CHECK(field_of([](TrainConfig& c) { c.q_functions = 0; }).find("q_functions") !=
        std::string::npos);
  CHECK(field_of([](TrainConfig& c) { c.batch_size = 0; }).find("batch_size") !=
        std::string::npos);
  CHECK(field_of([](TrainConfig& c) { c.total_frames = 10; }).find("total_frames") !=
        std::string::npos);
  CHECK(field_of([](TrainConfig& c) {
          c.strategy = "mve";
          c.horizon = 0;
        }).find("horizon") != std::string::npos);
  CHECK(field_of([](TrainConfig&) {}) == "valid");
  CHECK(field_of([](TrainConfig& c) { c.horizon = 0; }) == "valid");
}

TEST_CASE("config text round trip and profile ordering") {
  TrainConfig c = tiny("cov_steve");
  c.lambda = 0.25;
  std::stringstream text;
  write_config(text, c);
  TrainConfig back = TrainConfig::paper();
  apply_config_text(back, text);
  CHECK(back.to_map() == c.to_map());

  // A profile line anywhere applies before the other keys.
  std::istringstream late("batch_size = 32\n# comment\n\nprofile = paper\nrun.version = x\n");
  TrainConfig d;
  apply_config_text(d, late);
  CHECK(d.profile == "paper");
  CHECK(d.batch_size == 32);
  CHECK(d.warmup_frames == 100000);

  std::istringstream bad("horizon = 3\nno equals sign\n");
  TrainConfig e;
  try {
    apply_config_text(e, bad);
    FAIL("expected an error");
  } catch (const std::invalid_argument& err) {
    CHECK(std::string(err.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(load_config("/nonexistent/steve.cfg"), std::runtime_error);
}

TEST_CASE("strategy presets") {
  TrainConfig c;
  c.strategy = "mve";
  const TrainConfig r = c.resolved();
  CHECK(r.transition_models == 1);
  CHECK(r.reward_models == 1);
  CHECK(r.q_functions == 1);
  CHECK(r.uses_tdk());
  c.strategy = "td";
  CHECK_FALSE(c.uses_model());
  CHECK(c.effective_horizon() == 0);
  c.strategy = "tdlambda";
  c.lambda = 0.75;
  CHECK(c.weighting().lambda == 0.75);
  CHECK(known_strategies().size() == 7);
}

TEST_CASE("metrics CSV leaves unset cells empty") {
  std::ostringstream out;
  write_metrics_header(out);
  MetricsRow row;
  row.step = 3;
  row.frames = 10;
  row.score = -1.5;
  write_metrics_row(out, row);
  CHECK(out.str() ==
        "step,frames,score,value_error,critic_loss,model_loss,model_usage,wall_clock_s\n"
        "3,10,-1.5,,,,,\n");
}

TEST_CASE("evaluate") {
  ChainEnv chain;
  const ActionFn anything = [](const Eigen::VectorXd& s) {
    return Eigen::VectorXd::Constant(1, s.sum() - 0.5);
  };
  CHECK(evaluate(anything, chain, 3) == true_chain_value(0));
  CHECK_THROWS_AS(evaluate(anything, chain, 0), std::invalid_argument);

  AtGoal at_goal;
  const ActionFn still = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(2); };
  CHECK(std::abs(evaluate(still, at_goal, 2)) < 1e-12);

  PointMassEnv pm(3);
  Rng rng(4);
  CHECK(random_policy_score(pm, 5, rng) < 0.0);
}

TEST_CASE("discounted chain values") {
  CHECK(discounted_chain_value(99, 0.9) == 100.0);
  CHECK(discounted_chain_value(98, 0.9) == doctest::Approx(-1.0 + 0.9 * 100.0));
  // Closed form: -(1 - g^k)/(1 - g) + g^k * 100 with k = 99 - i.
  for (int i : {0, 17, 60}) {
    const double g = 0.97;
    const double k = 99 - i;
    CHECK(discounted_chain_value(i, g) ==
          doctest::Approx(-(1 - std::pow(g, k)) / (1 - g) + std::pow(g, k) * 100).epsilon(1e-12));
  }
  CHECK(discounted_chain_value(0, 1.0) == true_chain_value(0));
  CHECK_THROWS_AS(discounted_chain_value(100, 0.9), std::out_of_range);
}

TEST_CASE("no updates when every frame is warmup") {
  TrainConfig c = tiny("steve");
  c.total_frames = c.warmup_frames;
  const TrainResult r = run_training(c);
  CHECK(r.policy_updates == 0);
  CHECK(r.model_updates == c.pretrain_updates);
  CHECK(r.frames == c.warmup_frames);
  REQUIRE(r.metrics.size() == 1);
  CHECK(r.metrics.front().step == 0);
}

TEST_CASE("synchronous schedule honors the update ratios") {
  TrainConfig c = tiny("steve");
  c.updates_per_frame = 0.6;
  c.model_updates_per_frame = 0.3;
  const TrainResult r = run_training(c);
  CHECK(r.frames == c.total_frames);
  CHECK(r.policy_updates == 120);  // floor(200 * 0.6)
  CHECK(r.model_updates == c.pretrain_updates + 60);
  CHECK(r.update_usage.size() == 120);
  for (std::size_t k = 1; k < r.metrics.size(); ++k) {
    CHECK(r.metrics[k].step > r.metrics[k - 1].step);
    CHECK(*r.metrics[k].frames >= *r.metrics[k - 1].frames);
  }
  CHECK(r.metrics.back().step == r.policy_updates);

  c.updates_per_frame = 4.0;
  c.total_frames = 230;
  CHECK(run_training(c).policy_updates == 120);
}

TEST_CASE("synchronous runs reproduce their metrics bit for bit") {
  TempDir a("det_a"), b("det_b");
  const TrainConfig c = tiny("steve");
  run_training(c, {a.path.string()});
  run_training(c, {b.path.string()});
  const std::string csv = slurp(a.path / "metrics.csv");
  CHECK(csv.size() > 100);
  CHECK(csv == slurp(b.path / "metrics.csv"));

  // The manifest alone reproduces the run.
  TempDir again("det_again");
  const TrainConfig from_manifest = load_config((a.path / "manifest.txt").string());
  CHECK(from_manifest.to_map() == c.resolved().to_map());
  run_training(from_manifest, {again.path.string()});
  CHECK(slurp(again.path / "metrics.csv") == csv);

  TrainConfig other = c;
  other.seed = 6;
  TempDir d("det_other");
  run_training(other, {d.path.string()});
  CHECK(slurp(d.path / "metrics.csv") != csv);
}

TEST_CASE("run artifacts") {
  TempDir dir("artifacts");
  const TrainResult r = run_training(tiny("steve"), {dir.path.string(), "1.2.3"});
  CHECK(fs::exists(dir.path / "checkpoints" / "agent.txt"));
  CHECK(fs::exists(dir.path / "checkpoints" / "models.txt"));
  const std::string manifest = slurp(dir.path / "manifest.txt");
  CHECK(manifest.find("strategy = steve") != std::string::npos);
  CHECK(manifest.find("seed = 5") != std::string::npos);
  CHECK(manifest.find("run.version = 1.2.3") != std::string::npos);
  CHECK(manifest.find("run.finished") != std::string::npos);
  CHECK(manifest.find("run.policy_updates = " + std::to_string(r.policy_updates)) !=
        std::string::npos);

  std::ifstream csv(dir.path / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == kMetricsHeader);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == r.metrics.size());

  std::ifstream agent_file(dir.path / "checkpoints" / "agent.txt");
  const Agent restored = read_agent(agent_file, agent_config_for(r.config, 4, 2));
  CHECK(restored.critic_count() == r.config.q_functions);
}

TEST_CASE("no files without an output directory, and TD needs no model") {
  const TrainResult r = run_training(tiny("td"));
  CHECK(r.model_updates == 0);
  CHECK_FALSE(r.metrics.back().model_loss.has_value());
  CHECK(r.metrics.back().critic_loss.has_value());
}

TEST_CASE("model usage by strategy") {
  for (double u : run_training(tiny("td")).update_usage) CHECK(u == 0.0);
  for (double u : run_training(tiny("mve")).update_usage) CHECK(u == 1.0);
  const TrainResult steve = run_training(tiny("steve"));
  REQUIRE_FALSE(steve.update_usage.empty());
  for (double u : steve.update_usage) {
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
  CHECK(steve.metrics.back().model_usage.has_value());
}

TEST_CASE("chain runs log value error; pointmass runs do not") {
  TrainConfig c = tiny("steve", "chain");
  c.discount = 0.9;
  const TrainResult r = run_training(c);
  for (const auto& row : r.metrics) {
    REQUIRE(row.value_error.has_value());
    CHECK(*row.value_error >= 0.0);
    CHECK(row.score == true_chain_value(0));
  }
  CHECK_FALSE(run_training(tiny("td")).metrics.front().value_error.has_value());
}

TEST_CASE("a diverging run halts with a diagnostic dump") {
  TempDir dir("halt");
  TrainConfig c = tiny("td");
  c.learning_rate = 1e200;
  CHECK_THROWS_AS(run_training(c, {dir.path.string()}), std::runtime_error);
  REQUIRE(fs::exists(dir.path / "failure.txt"));
  CHECK(slurp(dir.path / "failure.txt").find("non-finite") != std::string::npos);
  CHECK(slurp(dir.path / "manifest.txt").find("run.error") != std::string::npos);
}

TEST_CASE("invalid configs fail before any artifact is written") {
  TempDir dir("invalid");
  TrainConfig c = tiny("steve");
  c.discount = 1.5;
  CHECK_THROWS_AS(run_training(c, {dir.path.string()}), std::invalid_argument);
  CHECK_THROWS_AS(run_async(c, {dir.path.string()}), std::invalid_argument);
  CHECK_FALSE(fs::exists(dir.path));
}

TEST_CASE("async accounting with eight actors") {
  TrainConfig c = tiny("steve");
  c.actors = 8;
  c.total_frames = 600;
  const TrainResult r = run_async(c);
  CHECK(r.error.empty());
  REQUIRE(r.actor_frames.size() == 8);
  long sum = 0;
  for (long f : r.actor_frames) sum += f;
  CHECK(sum == c.total_frames);
  CHECK(r.frames == c.total_frames);
  // Gated updates catch up with every collected frame.
  CHECK(r.policy_updates == 100);
  CHECK(r.model_updates == c.pretrain_updates + 100);
  for (std::size_t k = 1; k < r.metrics.size(); ++k) {
    REQUIRE(r.metrics[k].wall_clock_s.has_value());
    CHECK(*r.metrics[k].wall_clock_s >= *r.metrics[k - 1].wall_clock_s);
    CHECK(r.metrics[k].step > r.metrics[k - 1].step);
  }
}

TEST_CASE("async with one actor matches the synchronous schedule") {
  TrainConfig c = tiny("mve");
  const TrainResult sync = run_training(c);
  const TrainResult async = run_async(c);
  CHECK(async.error.empty());
  CHECK(async.frames == sync.frames);
  CHECK(async.policy_updates == sync.policy_updates);
  CHECK(async.metrics.size() == sync.metrics.size());
  for (double u : async.update_usage) CHECK(u == 1.0);
}

TEST_CASE("a crashing actor shuts the run down cleanly") {
  TempDir dir("crash");
  TrainConfig c = tiny("steve");
  c.actors = 4;
  c.total_frames = 100000;
  std::atomic<int> calls{0};
  AsyncHooks hooks;
  hooks.before_frame = [&](int actor, long frame) {
    ++calls;
    if (actor == 2 && frame > 300) throw std::runtime_error("injected");
  };
  const TrainResult r = run_async(c, {dir.path.string()}, hooks);
  CHECK(r.error.find("injected") != std::string::npos);
  CHECK(r.frames < c.total_frames);
  CHECK(fs::exists(dir.path / "failure.txt"));
  CHECK(fs::exists(dir.path / "metrics.csv"));
  const std::string manifest = slurp(dir.path / "manifest.txt");
  CHECK(manifest.find("run.error") != std::string::npos);
  CHECK(manifest.find("run.mode = async") != std::string::npos);
}

TEST_CASE("async without gating still finishes") {
  TrainConfig c = tiny("td");
  c.gate_updates = false;
  c.actors = 2;
  const TrainResult r = run_async(c);
  CHECK(r.error.empty());
  CHECK(r.frames == c.total_frames);
  CHECK(r.policy_updates >= 0);
}
