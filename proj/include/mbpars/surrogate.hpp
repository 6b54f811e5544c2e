#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mbpars/dataset.hpp"
#include "mbpars/net.hpp"

namespace mbpars {

// Learned delta-state dynamics: state_{t+1} = state_t + f(state_t, a_t, ctx_t).
// Input is [state, action, fault context]; the sigmoid-affine head bounds
// every predicted delta to [-delta_max, delta_max].
struct SurrogateModel {
  DenseNet net;
  int horizon = 5;         // M used for the multi-step loss
  double delta_max = 1.0;
  int n_buses = 0;         // state layout: [V(n_buses), P(n_controlled)]
  int n_controlled = 0;
  double control_dt = kControlDt;

  int state_dim() const { return n_buses + n_controlled; }
  int action_dim() const { return n_controlled; }
};

SurrogateModel make_surrogate(int n_buses, int n_controlled,
                              const std::vector<int>& hidden, int horizon,
                              double delta_max, std::uint64_t seed);

Vec predict_delta(const SurrogateModel& model, const Vec& state,
                  const Vec& action, const Eigen::Vector4d& ctx);

// Multi-step prediction loss: recursive rollout from the ground-truth first
// state, predicted states fed back, mean squared L2 error over tuples and
// steps (normalized by count * M). The time-offset context component advances
// by control_dt per recursion step.
double multistep_loss(const SurrogateModel& model,
                      std::span<const MultiStepTuple> tuples);

// Same loss with exact reverse-mode gradients through the recursion.
double multistep_loss_and_grad(const SurrogateModel& model,
                               std::span<const MultiStepTuple> tuples,
                               DenseGrads* grads);

struct SurrogateTrainOptions {
  int epochs = 60;
  int batch_size = 256;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double val_frac = 0.1;
  int retrain_epochs = 8;
  double offline_mix_frac = 0.25;
  // Retrain aborts (reverting to the best weights) if validation loss
  // exceeds guard_factor times its starting value.
  double guard_factor = 1.1;
};

TrainReport train_offline(SurrogateModel& model, const MultiStepDataset& data,
                          const SurrogateTrainOptions& options,
                          std::uint64_t seed);

struct RetrainResult {
  bool ran = false;
  bool guard_tripped = false;
  double val_before = 0.0;
  double val_after = 0.0;
};

// Continues training on mix(online, 25% of offline). Skips (with a warning
// on stderr) when the online set is empty.
RetrainResult retrain(SurrogateModel& model, const MultiStepDataset& online,
                      const MultiStepDataset& offline,
                      const SurrogateTrainOptions& options,
                      std::uint64_t seed);

using DeltaFn =
    std::function<Vec(const Vec& state, const Vec& action,
                      const Eigen::Vector4d& ctx)>;

struct HorizonErrorTable {
  std::vector<int> horizons;
  Mat per_dim;    // row per horizon: RMSE per state dimension
  Vec aggregate;  // RMSE over all dimensions
};

// Open-loop rollout error against ground-truth trajectories (raw recursion,
// no clipping).
HorizonErrorTable horizon_error(const DeltaFn& delta,
                                std::span<const Trajectory> trajectories,
                                std::span<const int> horizons);
HorizonErrorTable horizon_error(const SurrogateModel& model,
                                std::span<const Trajectory> trajectories,
                                std::span<const int> horizons);

void write_horizon_error_csv(const std::string& path,
                             const HorizonErrorTable& table);

}  // namespace mbpars
