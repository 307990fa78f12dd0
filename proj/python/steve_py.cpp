// Python bindings: the toy, target weighting, chain values and training runs.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <optional>
#include <string>

#include "steve/tabular_toy.hpp"
#include "steve/trainer.hpp"
#include "steve/value_expansion.hpp"

namespace py = pybind11;
using namespace steve;

namespace {

WeightingStrategy strategy_from(const std::string& name, double lambda, double variance_floor) {
  WeightingStrategy s;
  s.kind = parse_weighting(name);
  s.lambda = lambda;
  s.variance_floor = variance_floor;
  return s;
}

TrainConfig config_from(const std::map<std::string, std::string>& overrides,
                        const std::string& profile) {
  TrainConfig c = TrainConfig::for_profile(profile);
  for (const auto& [key, value] : overrides) c.set(key, value);
  return c;
}

py::dict metrics_row(const MetricsRow& row) {
  py::dict d;
  d["step"] = row.step;
  d["frames"] = row.frames;
  d["score"] = row.score;
  d["value_error"] = row.value_error;
  d["critic_loss"] = row.critic_loss;
  d["model_loss"] = row.model_loss;
  d["model_usage"] = row.model_usage;
  d["wall_clock_s"] = row.wall_clock_s;
  return d;
}

py::dict train_result(const TrainResult& r) {
  py::dict d;
  py::list rows;
  for (const auto& row : r.metrics) rows.append(metrics_row(row));
  d["metrics"] = rows;
  d["config"] = r.config.to_map();
  d["update_usage"] = r.update_usage;
  d["policy_updates"] = r.policy_updates;
  d["model_updates"] = r.model_updates;
  d["frames"] = r.frames;
  d["random_score"] = r.random_score;
  d["final_score"] = r.final_score;
  d["actor_frames"] = r.actor_frames;
  d["error"] = r.error;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Model-based value expansion: tabular toy, target weighting and DDPG training";

  m.def("true_chain_value", &true_chain_value, py::arg("state"),
        py::arg("num_states") = ChainEnv::kDefaultStates,
        "Undiscounted return of the chain from `state`.");
  m.def("discounted_chain_value", &discounted_chain_value, py::arg("state"), py::arg("discount"),
        py::arg("num_states") = ChainEnv::kDefaultStates);

  m.def(
      "combine",
      [](const Eigen::VectorXd& means, const Eigen::VectorXd& variances,
         const std::string& strategy, double lambda, double variance_floor,
         std::optional<Eigen::MatrixXd> covariance) {
        if (means.size() != variances.size()) {
          throw py::value_error("means and variances differ in length");
        }
        const CombineResult r =
            combine(means, variances, covariance ? &*covariance : nullptr,
                    strategy_from(strategy, lambda, variance_floor));
        return py::make_tuple(r.target, r.weights);
      },
      py::arg("means"), py::arg("variances"), py::arg("strategy") = "steve",
      py::arg("lam") = 0.5, py::arg("variance_floor") = 1e-8, py::arg("covariance") = py::none(),
      "Weights over horizons and the combined target; returns (target, weights).");

  m.def(
      "run_toy",
      [](const std::string& strategy, int horizon, const std::string& mode, std::uint64_t seed,
         int max_updates, double noise, std::optional<double> stop_below) {
        ToyConfig c;
        c.strategy = strategy_from(strategy, 0.5, 1e-8);
        c.horizon = horizon;
        if (mode == "oracle") {
          c.model_mode = ToyModel::Mode::kOracle;
        } else if (mode == "noisy") {
          c.model_mode = ToyModel::Mode::kNoisy;
        } else {
          throw py::value_error("mode must be 'oracle' or 'noisy'");
        }
        c.seed = seed;
        c.max_updates = max_updates;
        c.noise_probability = noise;
        c.stop_below = stop_below;
        ToyRun run;
        {
          py::gil_scoped_release release;
          run = run_toy(c);
        }
        py::dict d;
        d["value_errors"] = run.value_errors;
        d["model_usage"] = run.model_usage;
        d["first_below_1"] = run.first_below(1.0);
        return d;
      },
      py::arg("strategy") = "steve", py::arg("horizon") = 5, py::arg("mode") = "oracle",
      py::arg("seed") = 0, py::arg("max_updates") = 30000, py::arg("noise") = 0.10,
      py::arg("stop_below") = py::none(),
      "Tabular chain run; value error and model usage after every update.");

  m.def(
      "config",
      [](const std::map<std::string, std::string>& overrides, const std::string& profile) {
        TrainConfig c = config_from(overrides, profile);
        c.validate();
        return c.to_map();
      },
      py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("profile") = "desk",
      "Resolved configuration as strings; raises ValueError on a bad key or value.");

  m.def(
      "train",
      [](const std::map<std::string, std::string>& overrides, const std::string& profile,
         const std::string& out) {
        const TrainConfig c = config_from(overrides, profile);
        TrainResult r;
        {
          py::gil_scoped_release release;
          const RunOutput output{out, "python"};
          r = c.async ? run_async(c, output) : run_training(c, output);
        }
        return train_result(r);
      },
      py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("profile") = "desk",
      py::arg("out") = "", "Runs training; `out` is the run directory (empty writes nothing).");

  m.def("strategies", &known_strategies);
  m.attr("metrics_header") = kMetricsHeader;
}
