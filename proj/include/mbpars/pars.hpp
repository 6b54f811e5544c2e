#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

#include "mbpars/baseline.hpp"
#include "mbpars/dataset.hpp"
#include "mbpars/grid.hpp"
#include "mbpars/net.hpp"
#include "mbpars/reward.hpp"
#include "mbpars/surrogate.hpp"

namespace mbpars {

struct ParsConfig {
  int num_directions = 16;        // N
  int top_directions = 8;         // b
  int rollouts_per_direction = 2; // m, per sign
  double step_size = 0.02;        // alpha
  double noise_std = 0.03;        // nu
  double decay_rate = 0.9985;     // epsilon
  int iterations = 150;           // H
  int tasks_per_eval = 3;         // p, tasks sampled per direction
  int update_frequency = 5;       // UF, surrogate retrain cadence
  double gamma = 1.0;
  std::uint64_t seed = 0;
  int workers = 1;
  int checkpoint_every = 0;       // 0: final checkpoint only
  int plateau_patience = 0;       // 0: no early stop
  double plateau_min_delta_frac = 0.005;
};

struct DirectionBatch {
  std::vector<Vec> deltas;
  std::vector<double> reward_pos;
  std::vector<double> reward_neg;
};

// Seeded i.i.d. standard-normal perturbations.
DirectionBatch sample_directions(int dim, int count, std::uint64_t seed);

// Direction indices sorted by max(r+, r-) descending, ties by index.
std::vector<int> rank_directions(const std::vector<double>& reward_pos,
                                 const std::vector<double>& reward_neg);

// ARS update: keep the top b directions, normalize the step by the
// population std of their 2b retained rewards (floored at 1e-8), move along
// the reward-difference-weighted sum of perturbations.
Vec update_theta(const Vec& theta, const DirectionBatch& batch, double alpha,
                 int top_b);

std::pair<double, double> decay(double alpha, double nu, double epsilon);

// --- Rollout backends --------------------------------------------------------

// One in-flight episode. Values are [V, P] state vectors; ctx carries the
// four fault scalars at the current time.
class EpisodeSim {
 public:
  virtual ~EpisodeSim() = default;
  virtual void reset(const Task& task) = 0;
  virtual void step(const Vec& action) = 0;
  virtual Vec state_vec() const = 0;
  virtual Eigen::Vector4d ctx() const = 0;
  virtual double t() const = 0;
  virtual bool done() const = 0;
};

class RolloutBackend {
 public:
  virtual ~RolloutBackend() = default;
  virtual std::unique_ptr<EpisodeSim> make_sim() const = 0;
  virtual bool ground_truth() const = 0;
};

// Wraps the reference simulator; every step increments a shared
// ground-truth-sample counter.
class GroundTruthBackend : public RolloutBackend {
 public:
  explicit GroundTruthBackend(const GridModel& grid) : grid_(&grid) {}
  std::unique_ptr<EpisodeSim> make_sim() const override;
  bool ground_truth() const override { return true; }
  long long samples_used() const { return samples_.load(); }

 private:
  const GridModel* grid_;
  mutable std::atomic<long long> samples_{0};
  friend class GroundTruthSim;
};

// Rolls the learned delta model forward; predicted states are clipped to the
// physical bounds before being observed by the policy.
class SurrogateBackend : public RolloutBackend {
 public:
  SurrogateBackend(const SurrogateModel& model, const GridModel& grid)
      : model_(&model), grid_(&grid) {}
  std::unique_ptr<EpisodeSim> make_sim() const override;
  bool ground_truth() const override { return false; }

 private:
  const SurrogateModel* model_;
  const GridModel* grid_;
};

// --- Rollouts ----------------------------------------------------------------

struct RolloutOutcome {
  double episode_return = 0.0;
  double shed_total = 0.0;
  RunningStats visited;  // raw post-step observations
  Trajectory traj;       // populated when collect_trajectory is set
};

RolloutOutcome rollout(const LstmPolicy& policy, EpisodeSim& sim,
                       const Task& task, const RunningStats& frozen_stats,
                       const RewardParams& reward, const GridModel& grid,
                       double gamma, bool collect_trajectory = false);

// --- Trainer -----------------------------------------------------------------

struct IterationReport {
  int iteration = 0;
  double wall_seconds = 0.0;
  double mean_eval_reward = 0.0;
  long long ground_truth_samples = 0;
  double alpha = 0.0;
  double nu = 0.0;
  // NaN when no surrogate is attached or the last retrain diverged.
  double surrogate_val_loss = std::numeric_limits<double>::quiet_NaN();
  bool retrained = false;
  bool surrogate_diverged = false;
};

// Runs Algorithm-style iterations: N perturbation directions evaluated in
// parallel on the training backend, top-b update, ground-truth evaluation
// over all tasks (which also feeds the online dataset and the observation
// statistics), periodic surrogate retraining, and step/noise decay.
class ParsTrainer {
 public:
  ParsTrainer(ParsConfig config, const GridModel& grid,
              std::vector<Task> train_tasks, RewardParams reward,
              LstmPolicy initial_policy, RunningStats initial_stats,
              SurrogateModel* surrogate, const MultiStepDataset* offline,
              SurrogateTrainOptions retrain_options,
              double wall_offset_seconds = 0.0);

  IterationReport run_iteration();

  // Loops up to H iterations with optional plateau early stop; the callback
  // sees every report as it is produced.
  std::vector<IterationReport> run(
      const std::function<void(const IterationReport&)>& on_iteration = {});

  const Vec& theta() const { return theta_; }
  LstmPolicy policy_snapshot() const;
  const RunningStats& observation_stats() const { return stats_; }
  long long ground_truth_samples() const { return gt_backend_.samples_used(); }
  int iteration() const { return iteration_; }
  const MultiStepDataset& online_data() const { return online_; }

 private:
  ParsConfig config_;
  const GridModel* grid_;
  std::vector<Task> tasks_;
  RewardParams reward_;
  LstmPolicy policy_;  // layout template; weights live in theta_
  Vec theta_;
  RunningStats stats_;
  SurrogateModel* surrogate_;
  const MultiStepDataset* offline_;
  SurrogateTrainOptions retrain_options_;
  GroundTruthBackend gt_backend_;
  std::unique_ptr<SurrogateBackend> surrogate_backend_;
  MultiStepDataset online_;
  double alpha_;
  double nu_;
  int iteration_ = 0;
  int next_episode_id_ = 0;
  double wall_offset_;
  std::chrono::steady_clock::time_point start_;
};

void write_report_csv_header(std::ostream& out);
void write_report_csv_row(std::ostream& out, const IterationReport& report);

}  // namespace mbpars
