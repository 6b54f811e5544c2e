#pragma once

#include <string>
#include <vector>

#include "mbpars/baseline.hpp"
#include "mbpars/grid.hpp"
#include "mbpars/pars.hpp"
#include "mbpars/reward.hpp"
#include "mbpars/surrogate.hpp"

namespace mbpars {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DatasetConfig {
  int episodes_per_task = 20;
  double noise_std = 0.03;
  int horizon = 5;  // M
};

struct SurrogateConfig {
  std::vector<int> hidden = {128, 64, 64};
  double delta_max = 1.0;
  SurrogateTrainOptions train;
};

struct PolicyConfig {
  int hidden = 32;
  ImitationOptions imitation;
};

// With-imitation runs use separate step/noise/decay values, mirroring the
// paired hyperparameter rows.
struct ParsPair {
  double alpha = 0.02;
  double nu = 0.03;
  double epsilon = 0.9985;
  double alpha_with_il = 0.01;
  double nu_with_il = 0.0075;
  double epsilon_with_il = 0.9999;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";
  std::string backend = "model_based";  // or "model_free"
  bool use_imitation = true;
  int workers = 1;
  GridConfig grid;
  DatasetConfig dataset;
  SurrogateConfig surrogate;
  PolicyConfig policy;
  RewardParams reward;
  ParsConfig pars;
  ParsPair pars_pair;
  double compare_threshold_frac = 0.05;
  UvlsRule uvls;

  // Explicit task lists; filled from the default grids when absent.
  std::vector<Task> train_tasks;
  std::vector<Task> test_tasks;

  bool model_based() const { return backend == "model_based"; }
  // Picks alpha/nu/epsilon according to use_imitation.
  ParsConfig effective_pars() const;
};

// Strict parse: unknown keys anywhere are rejected; cross-module dimension
// consistency is validated.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_json(const std::string& text);

// FNV-1a over the canonical serialized form; stamped into outputs.
std::string config_hash(const ExperimentConfig& config);

std::string serialize_config(const ExperimentConfig& config);

}  // namespace mbpars
