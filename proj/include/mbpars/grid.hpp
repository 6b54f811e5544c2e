#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

namespace mbpars {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Control period and integration substep.
inline constexpr double kControlDt = 0.1;
inline constexpr double kSubstepH = 0.02;
inline constexpr int kSubstepsPerControl = 5;
inline constexpr double kEpisodeEnd = 8.0;
inline constexpr int kEpisodeSteps = 80;

// Physical clipping bounds.
inline constexpr double kVoltageMax = 1.2;
inline constexpr double kFaultVoltageFloor = 0.05;

// Action bounds: shed fraction per controlled bus, minus means shedding.
inline constexpr double kActionLo = -0.2;
inline constexpr double kActionHi = 0.0;

// Threshold below which a bus counts as fully shed; shedding commanded
// there is invalid and is zeroed by the simulator.
inline constexpr double kLoadEps = 1e-3;

struct GridConfig {
  int n_buses = 6;
  std::vector<int> controlled = {1, 3, 5};
  std::string topology = "ring";
  double w1 = 0.12;  // nearest-neighbor coupling
  double w2 = 0.05;  // second-neighbor coupling
  double v0 = 1.0;
  double load_weight = 1.0;
  double v_stall = 0.70;
  double v_rec = 0.85;
  double stall_growth = 8.0;   // beta, 1/s
  double stall_decay = 6.0;    // lambda, 1/s
  double fault_depth = 0.9;    // max fault depression, p.u.
  double prox_decay = 1.5;     // kappa, hops
  double stall_seed = 0.8;     // post-fault stall seed in [0,1]
};

// Immutable network model; safe to share across rollout workers.
struct GridModel {
  int n_buses = 0;
  std::vector<int> controlled;
  Mat coupling;       // symmetric, zero diagonal, non-negative
  Vec base_voltage;   // V0
  Vec base_load;      // L
  double v_stall = 0.70;
  double v_rec = 0.85;
  double stall_growth = 8.0;
  double stall_decay = 1.2;
  double fault_depth = 0.9;
  double prox_decay = 1.5;
  double stall_seed = 0.8;

  int n_controlled() const { return static_cast<int>(controlled.size()); }
  // Graph distance on the ring.
  int hops(int i, int j) const;
};

struct Task {
  double load_scale = 1.0;
  int fault_bus = 0;
  double fault_start = 1.0;     // s
  double fault_duration = 0.1;  // s

  double t_clear() const { return fault_start + fault_duration; }
};

struct EnvState {
  int step = 0;      // t = step * kControlDt
  Vec voltage;       // per bus, p.u.
  Vec stall;         // per bus, in [0,1]
  Vec load_frac;     // per controlled bus, remaining fraction in [0,1]
  Task task;

  double t() const { return step * kControlDt; }
  bool done() const { return step >= kEpisodeSteps; }
};

GridModel build_grid(const GridConfig& config);

// Checks the structural invariants (symmetric non-negative coupling with a
// zero diagonal, nominal voltages in range, threshold ordering, controlled
// set inside the bus range). build_grid calls this before returning.
void validate_grid(const GridModel& grid);

void validate_task(const Task& task, const GridModel& grid);

EnvState reset(const GridModel& grid, const Task& task);

// Advances one control step (kSubstepsPerControl explicit-Euler substeps).
// Throws if the state is terminal or the action is out of bounds.
EnvState step(const EnvState& state, const Vec& action, const GridModel& grid);

// Flat observation: [V (all buses), P (controlled), fault_bus/n, fault_start,
// fault_duration, t - fault_start].
Vec observe(const EnvState& state);

// The four fault scalars, i.e. the tail of the observation.
Eigen::Vector4d fault_context(const Task& task, double t, int n_buses);

// [V, P] stacked; the dynamics state the surrogate predicts.
Vec state_vector(const EnvState& state);

int observation_dim(const GridModel& grid);
int state_dim(const GridModel& grid);

// Per-step reward inputs derived from a transition.
struct StepOutcome {
  Vec shed_pu;        // per controlled bus, load removed this step in p.u.
  int invalid_count = 0;
};

// Computes shed amounts and invalid-action count from the state vectors
// around a transition. Works for both simulator and surrogate transitions.
StepOutcome transition_outcome(const Vec& state_before, const Vec& action,
                               const Vec& state_after, const GridModel& grid,
                               double load_scale, double p_eps = kLoadEps);

// Desk-scale scenario grids: train = 3 load scales x 3 fault buses,
// test = 4 load scales x all buses.
std::pair<std::vector<Task>, std::vector<Task>> default_task_sets(
    const GridModel& grid);

}  // namespace mbpars
