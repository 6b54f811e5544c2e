#pragma once

#include <string>
#include <vector>

#include "mbpars/config.hpp"

namespace mbpars {

// Pipeline commands behind the CLI. Each writes its artifacts under
// config.out_dir (created if missing) plus a run_meta.json carrying the
// config hash. Errors surface as exceptions; the CLI maps them to exit
// codes (ConfigError -> 2, TrainingDivergence -> 3).

// Noisy-UVLS offline dataset -> offline.jsonl / offline.csv / summary.
std::string cmd_gen_data(const ExperimentConfig& config);

// Multi-step-loss surrogate training -> surrogate.json + loss and
// open-loop-error curves. Returns the checkpoint path.
std::string cmd_train_surrogate(const ExperimentConfig& config,
                                const std::string& dataset_path);

// Behavior cloning -> bc_policy.json + loss curve.
std::string cmd_imitate(const ExperimentConfig& config,
                        const std::string& dataset_path);

// Full policy-search loop on the configured backend -> report.csv +
// policy checkpoints. Model-based runs offset the wall clock by the
// surrogate (and imitation) training time recorded in their checkpoints.
std::string cmd_train_policy(const ExperimentConfig& config,
                             const std::string& surrogate_path,
                             const std::string& bc_path,
                             const std::string& dataset_path);

// Held-out evaluation on the reference simulator -> per-task rewards,
// recovery pass/fail, and trajectory dumps.
std::string cmd_evaluate(const ExperimentConfig& config,
                         const std::string& policy_path);

struct CompareRun {
  std::string label;
  std::vector<std::string> report_paths;  // one per seed
};

struct CompareRow {
  std::string label;
  bool converged = false;
  int iterations_to_threshold = -1;
  double seconds_to_threshold = 0.0;
  double samples_to_threshold = 0.0;
  double seconds_ratio = 1.0;  // vs the first (reference) run
  double samples_ratio = 1.0;
};

// Time/samples-to-threshold efficiency comparison across report CSVs.
// The threshold is best - frac * |best| over the curves averaged per label.
std::vector<CompareRow> compare_reports(const std::vector<CompareRun>& runs,
                                        double threshold_frac);

std::string cmd_compare(const ExperimentConfig& config,
                        const std::vector<CompareRun>& runs);

}  // namespace mbpars
