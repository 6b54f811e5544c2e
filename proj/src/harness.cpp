#include "mbpars/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "mbpars/checkpoint.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace mbpars {

namespace {

std::string ensure_out_dir(const ExperimentConfig& config) {
  fs::create_directories(config.out_dir);
  return config.out_dir;
}

void write_run_meta(const ExperimentConfig& config, const std::string& command,
                    const std::vector<std::string>& outputs) {
  nlohmann::json j = {
      {"command", command},
      {"config_hash", config_hash(config)},
      {"seed", config.seed},
      {"outputs", outputs},
  };
  std::ofstream out(fs::path(config.out_dir) / ("run_meta_" + command + ".json"));
  out << j.dump(2) << "\n";
}

void write_loss_csv(const std::string& path, const TrainReport& report) {
  std::ofstream out(path);
  out << "epoch,train_loss,val_loss\n";
  out.precision(17);
  for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
    out << e << "," << report.train_loss[e] << "," << report.val_loss[e]
        << "\n";
  }
}

// Simple comma-split CSV reader keyed by header names.
std::vector<std::map<std::string, double>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) return {};
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<std::map<std::string, double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::map<std::string, double> row;
    for (const std::string& col : header) {
      if (!std::getline(ss, cell, ',')) break;
      try {
        row[col] = std::stod(cell);
      } catch (...) {
        row[col] = std::numeric_limits<double>::quiet_NaN();
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

LstmPolicy fresh_policy(const ExperimentConfig& config, const GridModel& grid,
                        std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x706f6cULL));
  return make_lstm_policy(observation_dim(grid), config.policy.hidden,
                          grid.n_controlled(), rng);
}

}  // namespace

std::string cmd_gen_data(const ExperimentConfig& config) {
  const std::string out_dir = ensure_out_dir(config);
  const GridModel grid = build_grid(config.grid);
  const MultiStepDataset data = generate_offline(
      grid, config.train_tasks, config.dataset.episodes_per_task,
      config.dataset.noise_std, config.dataset.horizon, config.seed,
      config.uvls);

  const std::string jsonl = (fs::path(out_dir) / "offline.jsonl").string();
  save_dataset_jsonl(jsonl, data, config_hash(config));
  export_dataset_csv((fs::path(out_dir) / "offline.csv").string(), data);

  // Per-task tuple counts.
  const int per_task =
      static_cast<int>(data.size()) /
      std::max<int>(1, static_cast<int>(config.train_tasks.size()));
  std::ofstream summary(fs::path(out_dir) / "gen_data_summary.csv");
  summary << "task,load_scale,fault_bus,episodes,tuples\n";
  for (std::size_t i = 0; i < config.train_tasks.size(); ++i) {
    const Task& t = config.train_tasks[i];
    summary << i << "," << t.load_scale << "," << t.fault_bus << ","
            << config.dataset.episodes_per_task << "," << per_task << "\n";
  }
  std::cout << "gen-data: " << data.size() << " tuples ("
            << config.train_tasks.size() << " tasks x "
            << config.dataset.episodes_per_task << " episodes), M="
            << data.horizon << " -> " << jsonl << "\n";
  write_run_meta(config, "gen-data", {jsonl});
  return jsonl;
}

std::string cmd_train_surrogate(const ExperimentConfig& config,
                                const std::string& dataset_path) {
  const std::string out_dir = ensure_out_dir(config);
  const MultiStepDataset data = load_dataset_jsonl(dataset_path);
  const GridModel grid = build_grid(config.grid);
  SurrogateModel model = make_surrogate(
      grid.n_buses, grid.n_controlled(), config.surrogate.hidden,
      data.horizon, config.surrogate.delta_max, config.seed);
  const TrainReport report =
      train_offline(model, data, config.surrogate.train, config.seed);

  SurrogateCheckpoint ckpt;
  ckpt.model = std::move(model);
  ckpt.train_wall_seconds = report.wall_seconds;
  ckpt.val_loss = report.final_val_loss();
  ckpt.config_hash = config_hash(config);
  const std::string path = (fs::path(out_dir) / "surrogate.json").string();
  save_surrogate(path, ckpt);
  write_loss_csv((fs::path(out_dir) / "surrogate_loss.csv").string(), report);

  // Open-loop drift diagnostic on a reconstructed slice of the data.
  const std::vector<Trajectory> trajs = reconstruct_trajectories(data);
  std::vector<const Trajectory*> ptrs;
  std::vector<Trajectory> sample;
  for (std::size_t i = 0; i < trajs.size(); i += 9) sample.push_back(trajs[i]);
  const std::vector<int> horizons = {1, 2, 5, 10, 20, 40};
  write_horizon_error_csv(
      (fs::path(out_dir) / "horizon_error.csv").string(),
      horizon_error(ckpt.model, sample, horizons));

  std::cout << "train-surrogate: final val loss " << ckpt.val_loss << " in "
            << report.wall_seconds << "s -> " << path << "\n";
  write_run_meta(config, "train-surrogate", {path});
  return path;
}

std::string cmd_imitate(const ExperimentConfig& config,
                        const std::string& dataset_path) {
  const std::string out_dir = ensure_out_dir(config);
  const MultiStepDataset data = load_dataset_jsonl(dataset_path);
  const GridModel grid = build_grid(config.grid);
  LstmPolicy policy = fresh_policy(config, grid, config.seed);
  const TrainReport report =
      imitate(policy, data, config.policy.imitation, config.seed);

  PolicyCheckpoint ckpt;
  ckpt.policy = std::move(policy);
  ckpt.stats = RunningStats(observation_dim(grid));
  ckpt.train_wall_seconds = report.wall_seconds;
  ckpt.config_hash = config_hash(config);
  const std::string path = (fs::path(out_dir) / "bc_policy.json").string();
  save_policy(path, ckpt);
  write_loss_csv((fs::path(out_dir) / "bc_loss.csv").string(), report);
  std::cout << "imitate: final val MSE " << report.final_val_loss() << " in "
            << report.wall_seconds << "s -> " << path << "\n";
  write_run_meta(config, "imitate", {path});
  return path;
}

std::string cmd_train_policy(const ExperimentConfig& config,
                             const std::string& surrogate_path,
                             const std::string& bc_path,
                             const std::string& dataset_path) {
  const std::string out_dir = ensure_out_dir(config);
  const GridModel grid = build_grid(config.grid);

  // Offline data: needed for retraining (model-based) and inline imitation.
  MultiStepDataset offline;
  if (!dataset_path.empty()) {
    offline = load_dataset_jsonl(dataset_path);
  }

  double wall_offset = 0.0;
  SurrogateModel surrogate;
  SurrogateCheckpoint surrogate_ckpt;
  const bool model_based = config.model_based();
  if (model_based) {
    if (surrogate_path.empty()) {
      throw ConfigError(
          "train-policy: model_based backend requires --surrogate");
    }
    surrogate_ckpt = load_surrogate(surrogate_path);
    surrogate = std::move(surrogate_ckpt.model);
    wall_offset += surrogate_ckpt.train_wall_seconds;
    if (offline.empty()) {
      throw ConfigError(
          "train-policy: model_based backend requires --dataset for "
          "surrogate retraining");
    }
  }

  LstmPolicy policy;
  if (config.use_imitation) {
    if (!bc_path.empty()) {
      PolicyCheckpoint bc = load_policy(bc_path);
      policy = std::move(bc.policy);
      wall_offset += bc.train_wall_seconds;
    } else if (!offline.empty()) {
      policy = fresh_policy(config, grid, config.seed);
      const TrainReport bc_report =
          imitate(policy, offline, config.policy.imitation, config.seed);
      wall_offset += bc_report.wall_seconds;
    } else {
      throw ConfigError(
          "train-policy: use_imitation requires --bc-init or --dataset");
    }
  } else {
    policy = fresh_policy(config, grid, config.seed);
  }

  ParsConfig pars = config.effective_pars();
  ParsTrainer trainer(pars, grid, config.train_tasks, config.reward,
                      std::move(policy), RunningStats(observation_dim(grid)),
                      model_based ? &surrogate : nullptr,
                      model_based ? &offline : nullptr, config.surrogate.train,
                      wall_offset);

  const std::string report_path = (fs::path(out_dir) / "report.csv").string();
  std::ofstream report_out(report_path);
  write_report_csv_header(report_out);
  const std::string hash = config_hash(config);
  trainer.run([&](const IterationReport& r) {
    write_report_csv_row(report_out, r);
    report_out.flush();
    if (pars.checkpoint_every > 0 && r.iteration % pars.checkpoint_every == 0) {
      PolicyCheckpoint ckpt{trainer.policy_snapshot(),
                            trainer.observation_stats(), wall_offset, hash};
      save_policy((fs::path(out_dir) /
                   ("policy_iter_" + std::to_string(r.iteration) + ".json"))
                      .string(),
                  ckpt);
    }
  });

  PolicyCheckpoint final_ckpt{trainer.policy_snapshot(),
                              trainer.observation_stats(), wall_offset, hash};
  const std::string policy_path =
      (fs::path(out_dir) / "policy_final.json").string();
  save_policy(policy_path, final_ckpt);
  std::cout << "train-policy: " << trainer.iteration() << " iterations, "
            << trainer.ground_truth_samples() << " ground-truth samples -> "
            << report_path << "\n";
  write_run_meta(config, "train-policy", {report_path, policy_path});
  return report_path;
}

std::string cmd_evaluate(const ExperimentConfig& config,
                         const std::string& policy_path) {
  const std::string out_dir = ensure_out_dir(config);
  const GridModel grid = build_grid(config.grid);
  const PolicyCheckpoint ckpt = load_policy(policy_path);

  const std::string table_path =
      (fs::path(out_dir) / "eval_rewards.csv").string();
  std::ofstream table(table_path);
  table << "task,load_scale,fault_bus,fault_start,fault_duration,reward,"
           "min_v_at_check,recovery_pass,total_shed\n";
  table.precision(17);

  int passes = 0;
  double reward_sum = 0.0;
  for (std::size_t ti = 0; ti < config.test_tasks.size(); ++ti) {
    const Task& task = config.test_tasks[ti];
    EnvState state = reset(grid, task);
    LstmState lstm = initial_state(ckpt.policy);

    std::ofstream traj(fs::path(out_dir) /
                       ("trajectory_task" + std::to_string(ti) + ".csv"));
    traj << "t";
    for (int i = 0; i < grid.n_buses; ++i) traj << ",v" << i;
    for (int j = 0; j < grid.n_controlled(); ++j) traj << ",p" << j;
    for (int j = 0; j < grid.n_controlled(); ++j) traj << ",a" << j;
    traj << ",reward\n";
    traj.precision(17);

    const double check_t = task.t_clear() + 4.0;
    double min_v_at_check = -1.0;
    double total_reward = 0.0;
    double total_shed = 0.0;
    bool checked = false;
    while (!state.done()) {
      const Vec obs = observe(state);
      const Vec action =
          policy_step(ckpt.policy, ckpt.stats.normalize(obs), lstm);
      const Vec before = state_vector(state);
      const EnvState next = step(state, action, grid);
      const Vec after = state_vector(next);
      const StepOutcome oc = transition_outcome(
          before, action, after, grid, task.load_scale, config.reward.p_eps);
      const double r =
          step_reward(next.voltage, oc.shed_pu, oc.invalid_count, next.t(),
                      task.t_clear(), config.reward);
      total_reward += r;
      total_shed += oc.shed_pu.sum();

      traj << state.t();
      for (int i = 0; i < grid.n_buses; ++i) traj << "," << state.voltage[i];
      for (int j = 0; j < grid.n_controlled(); ++j) {
        traj << "," << state.load_frac[j];
      }
      for (int j = 0; j < grid.n_controlled(); ++j) traj << "," << action[j];
      traj << "," << r << "\n";

      if (!checked && next.t() >= check_t - 1e-9) {
        min_v_at_check = next.voltage.minCoeff();
        checked = true;
      }
      state = next;
    }
    const bool pass = checked && min_v_at_check >= 0.95;
    passes += pass ? 1 : 0;
    reward_sum += total_reward;
    table << ti << "," << task.load_scale << "," << task.fault_bus << ","
          << task.fault_start << "," << task.fault_duration << ","
          << total_reward << "," << min_v_at_check << "," << (pass ? 1 : 0)
          << "," << total_shed << "\n";
  }
  std::cout << "evaluate: mean reward "
            << reward_sum / std::max<std::size_t>(1, config.test_tasks.size())
            << ", recovery " << passes << "/" << config.test_tasks.size()
            << " -> " << table_path << "\n";
  write_run_meta(config, "evaluate", {table_path});
  return table_path;
}

std::vector<CompareRow> compare_reports(const std::vector<CompareRun>& runs,
                                        double threshold_frac) {
  struct Curve {
    std::vector<double> reward, seconds, samples;
  };
  std::vector<Curve> curves;
  for (const CompareRun& run : runs) {
    if (run.report_paths.empty()) {
      throw std::invalid_argument("compare: run '" + run.label +
                                  "' has no reports");
    }
    std::vector<std::vector<std::map<std::string, double>>> seeds;
    std::size_t min_len = SIZE_MAX;
    for (const std::string& path : run.report_paths) {
      seeds.push_back(read_csv(path));
      min_len = std::min(min_len, seeds.back().size());
    }
    if (min_len == 0 || min_len == SIZE_MAX) {
      throw std::invalid_argument("compare: empty report for '" + run.label +
                                  "'");
    }
    Curve c;
    for (std::size_t i = 0; i < min_len; ++i) {
      double r = 0.0, t = 0.0, s = 0.0;
      for (const auto& rows : seeds) {
        r += rows[i].at("mean_eval_reward");
        t += rows[i].at("wall_seconds");
        s += rows[i].at("ground_truth_samples");
      }
      const double n = static_cast<double>(seeds.size());
      c.reward.push_back(r / n);
      c.seconds.push_back(t / n);
      c.samples.push_back(s / n);
    }
    curves.push_back(std::move(c));
  }

  double best = -std::numeric_limits<double>::infinity();
  for (const Curve& c : curves) {
    best = std::max(best, *std::max_element(c.reward.begin(), c.reward.end()));
  }
  const double threshold = best - threshold_frac * std::abs(best);

  std::vector<CompareRow> rows;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    CompareRow row;
    row.label = runs[r].label;
    const Curve& c = curves[r];
    for (std::size_t i = 0; i < c.reward.size(); ++i) {
      if (c.reward[i] >= threshold) {
        row.converged = true;
        row.iterations_to_threshold = static_cast<int>(i) + 1;
        row.seconds_to_threshold = c.seconds[i];
        row.samples_to_threshold = c.samples[i];
        break;
      }
    }
    rows.push_back(row);
  }
  const CompareRow& ref = rows.front();
  for (CompareRow& row : rows) {
    if (ref.converged && row.converged) {
      row.seconds_ratio = row.seconds_to_threshold /
                          std::max(ref.seconds_to_threshold, 1e-12);
      row.samples_ratio = row.samples_to_threshold /
                          std::max(ref.samples_to_threshold, 1e-12);
    } else {
      row.seconds_ratio = std::numeric_limits<double>::quiet_NaN();
      row.samples_ratio = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return rows;
}

std::string cmd_compare(const ExperimentConfig& config,
                        const std::vector<CompareRun>& runs) {
  const std::string out_dir = ensure_out_dir(config);
  const std::vector<CompareRow> rows =
      compare_reports(runs, config.compare_threshold_frac);
  const std::string path = (fs::path(out_dir) / "comparison.csv").string();
  std::ofstream out(path);
  out << "label,converged,iterations_to_threshold,seconds_to_threshold,"
         "samples_to_threshold,seconds_ratio,samples_ratio\n";
  out.precision(17);
  for (const CompareRow& row : rows) {
    out << row.label << "," << (row.converged ? 1 : 0) << ","
        << row.iterations_to_threshold << "," << row.seconds_to_threshold
        << "," << row.samples_to_threshold << "," << row.seconds_ratio << ","
        << row.samples_ratio << "\n";
    std::cout << "compare: " << row.label << " "
              << (row.converged
                      ? "converged at iter " +
                            std::to_string(row.iterations_to_threshold) +
                            " (" + std::to_string(row.samples_to_threshold) +
                            " ground-truth samples)"
                      : "non-convergent")
              << "\n";
  }
  write_run_meta(config, "compare", {path});
  return path;
}

}  // namespace mbpars
