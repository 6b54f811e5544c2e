#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mbpars/baseline.hpp"
#include "mbpars/checkpoint.hpp"
#include "mbpars/config.hpp"
#include "mbpars/grid.hpp"
#include "mbpars/harness.hpp"
#include "mbpars/pars.hpp"
#include "mbpars/reward.hpp"
#include "mbpars/surrogate.hpp"

namespace py = pybind11;
using namespace mbpars;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Model-based derivative-free policy search for emergency "
            "load-shedding voltage control";

  // --- environment ---
  py::class_<GridConfig>(m, "GridConfig")
      .def(py::init<>())
      .def_readwrite("n_buses", &GridConfig::n_buses)
      .def_readwrite("controlled", &GridConfig::controlled)
      .def_readwrite("topology", &GridConfig::topology)
      .def_readwrite("w1", &GridConfig::w1)
      .def_readwrite("w2", &GridConfig::w2)
      .def_readwrite("v0", &GridConfig::v0)
      .def_readwrite("v_stall", &GridConfig::v_stall)
      .def_readwrite("v_rec", &GridConfig::v_rec)
      .def_readwrite("stall_growth", &GridConfig::stall_growth)
      .def_readwrite("stall_decay", &GridConfig::stall_decay)
      .def_readwrite("fault_depth", &GridConfig::fault_depth)
      .def_readwrite("prox_decay", &GridConfig::prox_decay)
      .def_readwrite("stall_seed", &GridConfig::stall_seed);

  py::class_<GridModel>(m, "GridModel")
      .def_readonly("n_buses", &GridModel::n_buses)
      .def_readonly("controlled", &GridModel::controlled)
      .def_readonly("coupling", &GridModel::coupling)
      .def("hops", &GridModel::hops);

  py::class_<Task>(m, "Task")
      .def(py::init([](double load_scale, int fault_bus, double fault_start,
                       double fault_duration) {
             return Task{load_scale, fault_bus, fault_start, fault_duration};
           }),
           py::arg("load_scale") = 1.0, py::arg("fault_bus") = 0,
           py::arg("fault_start") = 1.0, py::arg("fault_duration") = 0.1)
      .def_readwrite("load_scale", &Task::load_scale)
      .def_readwrite("fault_bus", &Task::fault_bus)
      .def_readwrite("fault_start", &Task::fault_start)
      .def_readwrite("fault_duration", &Task::fault_duration)
      .def_property_readonly("t_clear", &Task::t_clear);

  py::class_<EnvState>(m, "EnvState")
      .def_readonly("step", &EnvState::step)
      .def_readonly("voltage", &EnvState::voltage)
      .def_readonly("stall", &EnvState::stall)
      .def_readonly("load_frac", &EnvState::load_frac)
      .def_property_readonly("t", &EnvState::t)
      .def_property_readonly("done", &EnvState::done);

  m.def("build_grid", &build_grid, py::arg("config") = GridConfig{});
  m.def("reset", &reset);
  m.def("step", &step);
  m.def("observe", &observe);
  m.def("state_vector", &state_vector);
  m.def("observation_dim", &observation_dim);
  m.def("default_task_sets", &default_task_sets);

  // --- reward ---
  py::class_<RewardParams>(m, "RewardParams")
      .def(py::init<>())
      .def_readwrite("failure_penalty", &RewardParams::failure_penalty)
      .def_readwrite("c1", &RewardParams::c1)
      .def_readwrite("c2", &RewardParams::c2)
      .def_readwrite("c3", &RewardParams::c3)
      .def_readwrite("dead_band", &RewardParams::dead_band)
      .def_readwrite("soft_tau", &RewardParams::soft_tau)
      .def_readwrite("p_eps", &RewardParams::p_eps);

  m.def("delta_v", &delta_v, py::arg("v"), py::arg("t"), py::arg("t_pf"));
  m.def("step_reward", &step_reward, py::arg("voltage"), py::arg("shed_pu"),
        py::arg("invalid_count"), py::arg("t"), py::arg("t_pf"),
        py::arg("params") = RewardParams{});
  m.def("episode_return",
        [](const std::vector<double>& rewards, double gamma) {
          return episode_return(rewards, gamma);
        },
        py::arg("rewards"), py::arg("gamma") = 1.0);

  // --- datasets / statistics ---
  py::class_<RunningStats>(m, "RunningStats")
      .def(py::init<int>())
      .def("update", &RunningStats::update)
      .def("merge", &RunningStats::merge)
      .def("normalize", &RunningStats::normalize)
      .def("mean", &RunningStats::mean)
      .def("stddev", &RunningStats::stddev)
      .def_property_readonly("count", &RunningStats::count);

  py::class_<MultiStepDataset>(m, "MultiStepDataset")
      .def_readonly("horizon", &MultiStepDataset::horizon)
      .def("__len__", &MultiStepDataset::size);

  // --- UVLS baseline ---
  py::class_<UvlsRule>(m, "UvlsRule")
      .def(py::init<>())
      .def_readwrite("trigger_v", &UvlsRule::trigger_v)
      .def_readwrite("dwell_s", &UvlsRule::dwell_s)
      .def_readwrite("shed_step", &UvlsRule::shed_step);

  py::class_<UvlsController>(m, "UvlsController")
      .def(py::init<UvlsRule, std::vector<int>, int>(), py::arg("rule"),
           py::arg("controlled"), py::arg("n_buses"))
      .def("reset", &UvlsController::reset)
      .def("action", &UvlsController::action);

  m.def("generate_offline", &generate_offline, py::arg("grid"),
        py::arg("tasks"), py::arg("episodes_per_task"), py::arg("noise_std"),
        py::arg("horizon"), py::arg("seed"), py::arg("rule") = UvlsRule{});
  m.def("save_dataset_jsonl", &save_dataset_jsonl, py::arg("path"),
        py::arg("data"), py::arg("config_hash") = "");
  m.def("load_dataset_jsonl", &load_dataset_jsonl);
  m.def("mix", &mix);

  // --- surrogate ---
  py::class_<SurrogateModel>(m, "SurrogateModel")
      .def_readonly("horizon", &SurrogateModel::horizon)
      .def_readonly("delta_max", &SurrogateModel::delta_max)
      .def_property_readonly("state_dim", &SurrogateModel::state_dim)
      .def_property_readonly("action_dim", &SurrogateModel::action_dim);

  m.def("make_surrogate", &make_surrogate, py::arg("n_buses"),
        py::arg("n_controlled"), py::arg("hidden"), py::arg("horizon"),
        py::arg("delta_max"), py::arg("seed"));
  m.def("predict_delta", &predict_delta);
  m.def("multistep_loss",
        [](const SurrogateModel& model, const MultiStepDataset& data) {
          return multistep_loss(model, data.tuples);
        });
  m.def("load_surrogate", [](const std::string& path) {
    return load_surrogate(path).model;
  });

  // --- policy ---
  py::class_<LstmPolicy>(m, "LstmPolicy")
      .def_readonly("input_dim", &LstmPolicy::input_dim)
      .def_readonly("hidden_dim", &LstmPolicy::hidden_dim)
      .def_readonly("output_dim", &LstmPolicy::output_dim)
      .def("param_count", &LstmPolicy::param_count);

  py::class_<LstmState>(m, "LstmState");
  m.def("initial_state", &initial_state);
  m.def("policy_step", &policy_step);
  m.def("policy_flatten", [](const LstmPolicy& p) { return flatten(p); });
  m.def("policy_unflatten",
        [](LstmPolicy& p, const Vec& flat) { unflatten(p, flat); });
  m.def("load_policy", [](const std::string& path) {
    const PolicyCheckpoint ckpt = load_policy(path);
    return std::make_pair(ckpt.policy, ckpt.stats);
  });

  // --- pipeline commands (same surface as the CLI) ---
  m.def("load_config", &load_config);
  m.def("parse_config_json", &parse_config_json);
  m.def("config_hash", &config_hash);
  m.def("cmd_gen_data", &cmd_gen_data);
  m.def("cmd_train_surrogate", &cmd_train_surrogate);
  m.def("cmd_imitate", &cmd_imitate);
  m.def("cmd_train_policy", &cmd_train_policy, py::arg("config"),
        py::arg("surrogate_path") = "", py::arg("bc_path") = "",
        py::arg("dataset_path") = "");
  m.def("cmd_evaluate", &cmd_evaluate);

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<TrainingDivergence>(m, "TrainingDivergence");

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("out_dir", &ExperimentConfig::out_dir)
      .def_readwrite("backend", &ExperimentConfig::backend)
      .def_readwrite("use_imitation", &ExperimentConfig::use_imitation)
      .def_readwrite("workers", &ExperimentConfig::workers);
}
