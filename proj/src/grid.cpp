#include "mbpars/grid.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace mbpars {

namespace {

constexpr double kTimeEps = 1e-9;

// First integration substep index whose entry time reaches `t_event`.
long long substep_index_at(double t_event) {
  return static_cast<long long>(std::ceil(t_event / kSubstepH - kTimeEps));
}

}  // namespace

int GridModel::hops(int i, int j) const {
  const int d = std::abs(i - j);
  return std::min(d, n_buses - d);
}

void validate_grid(const GridModel& g) {
  if (g.n_buses < 3) {
    throw std::invalid_argument("grid: need at least 3 buses");
  }
  if (g.controlled.empty()) {
    throw std::invalid_argument("grid: controlled bus set must not be empty");
  }
  std::set<int> seen;
  for (int c : g.controlled) {
    if (c < 0 || c >= g.n_buses) {
      throw std::invalid_argument("grid: controlled bus out of range");
    }
    if (!seen.insert(c).second) {
      throw std::invalid_argument("grid: duplicate controlled bus");
    }
  }
  if (g.coupling.rows() != g.n_buses || g.coupling.cols() != g.n_buses) {
    throw std::invalid_argument("grid: coupling shape mismatch");
  }
  if (!g.coupling.isApprox(g.coupling.transpose(), 0.0)) {
    throw std::invalid_argument("grid: coupling matrix must be symmetric");
  }
  if (g.coupling.diagonal().cwiseAbs().maxCoeff() != 0.0) {
    throw std::invalid_argument("grid: coupling diagonal must be zero");
  }
  if (g.coupling.minCoeff() < 0.0) {
    throw std::invalid_argument("grid: coupling entries must be >= 0");
  }
  if (g.base_voltage.minCoeff() < 0.95 || g.base_voltage.maxCoeff() > 1.05) {
    throw std::invalid_argument("grid: nominal voltage outside [0.95, 1.05]");
  }
  if (!(0.0 <= g.v_stall && g.v_stall < g.v_rec && g.v_rec < 0.95)) {
    throw std::invalid_argument("grid: need 0 <= v_stall < v_rec < 0.95");
  }
  if (g.stall_seed < 0.0 || g.stall_seed > 1.0) {
    throw std::invalid_argument("grid: stall seed outside [0,1]");
  }
}

GridModel build_grid(const GridConfig& config) {
  if (config.topology != "ring") {
    throw std::invalid_argument("grid: unknown topology '" + config.topology +
                                "'");
  }
  if (config.w1 < 0.0 || config.w2 < 0.0) {
    throw std::invalid_argument("grid: coupling weights must be >= 0");
  }
  if (config.n_buses < 3) {
    throw std::invalid_argument("grid: need at least 3 buses");
  }

  GridModel g;
  g.n_buses = config.n_buses;
  g.controlled = config.controlled;
  std::sort(g.controlled.begin(), g.controlled.end());
  g.coupling = Mat::Zero(g.n_buses, g.n_buses);
  for (int i = 0; i < g.n_buses; ++i) {
    for (int j = 0; j < g.n_buses; ++j) {
      if (i == j) continue;
      const int d = g.hops(i, j);
      if (d == 1) {
        g.coupling(i, j) = config.w1;
      } else if (d == 2) {
        g.coupling(i, j) = config.w2;
      }
    }
  }
  g.base_voltage = Vec::Constant(g.n_buses, config.v0);
  g.base_load = Vec::Constant(g.n_buses, config.load_weight);
  g.v_stall = config.v_stall;
  g.v_rec = config.v_rec;
  g.stall_growth = config.stall_growth;
  g.stall_decay = config.stall_decay;
  g.fault_depth = config.fault_depth;
  g.prox_decay = config.prox_decay;
  g.stall_seed = config.stall_seed;
  validate_grid(g);
  return g;
}

void validate_task(const Task& task, const GridModel& grid) {
  if (task.load_scale < 0.5 || task.load_scale > 1.5) {
    throw std::invalid_argument("task: load_scale outside [0.5, 1.5]");
  }
  if (task.fault_bus < 0 || task.fault_bus >= grid.n_buses) {
    throw std::invalid_argument("task: fault bus out of range");
  }
  if (task.fault_start <= 0.0 || task.fault_duration <= 0.0) {
    throw std::invalid_argument("task: fault timing must be positive");
  }
}

EnvState reset(const GridModel& grid, const Task& task) {
  validate_task(task, grid);
  EnvState s;
  s.step = 0;
  s.voltage = grid.base_voltage;
  s.stall = Vec::Zero(grid.n_buses);
  s.load_frac = Vec::Ones(grid.n_controlled());
  s.task = task;
  return s;
}

EnvState step(const EnvState& state, const Vec& action,
              const GridModel& grid) {
  if (state.done()) {
    throw std::logic_error("step: episode already terminal");
  }
  const int nc = grid.n_controlled();
  if (action.size() != nc) {
    throw std::invalid_argument("step: action dimension mismatch");
  }
  for (int j = 0; j < nc; ++j) {
    if (action[j] < kActionLo - 1e-12 || action[j] > kActionHi + 1e-12) {
      throw std::invalid_argument("step: action out of bounds");
    }
  }

  EnvState next = state;
  const Task& task = state.task;

  // Load update at step entry; commanded shed on an exhausted bus is invalid
  // and is dropped.
  for (int j = 0; j < nc; ++j) {
    double a = std::clamp(action[j], kActionLo, kActionHi);
    if (next.load_frac[j] < kLoadEps && a < -kLoadEps) a = 0.0;
    next.load_frac[j] = std::clamp(next.load_frac[j] * (1.0 + a), 0.0, 1.0);
  }

  // Proximity-weighted fault profile.
  Vec fault_profile = Vec::Zero(grid.n_buses);
  for (int i = 0; i < grid.n_buses; ++i) {
    fault_profile[i] =
        std::exp(-grid.hops(i, task.fault_bus) / grid.prox_decay);
  }
  const long long fault_on = substep_index_at(task.fault_start);
  const long long fault_off = substep_index_at(task.t_clear());

  // Full-bus remaining-load view: controlled buses shed, the rest stay at 1.
  Vec remaining = Vec::Ones(grid.n_buses);
  for (int j = 0; j < nc; ++j) remaining[grid.controlled[j]] = next.load_frac[j];

  for (int k = 0; k < kSubstepsPerControl; ++k) {
    const long long sub =
        static_cast<long long>(state.step) * kSubstepsPerControl + k;

    if (sub == fault_on) {
      next.stall = next.stall.cwiseMax(grid.stall_seed * fault_profile);
    }

    Vec depression =
        grid.coupling *
        (next.stall.cwiseProduct(remaining).cwiseProduct(grid.base_load) *
         task.load_scale);
    Vec v = (grid.base_voltage - depression)
                .cwiseMax(0.0)
                .cwiseMin(kVoltageMax);
    if (sub >= fault_on && sub < fault_off) {
      v = (v - grid.fault_depth * fault_profile).cwiseMax(kFaultVoltageFloor);
    }

    for (int i = 0; i < grid.n_buses; ++i) {
      const double grow = grid.stall_growth * (1.0 - next.stall[i]) *
                          std::max(grid.v_stall - v[i], 0.0);
      const double decay = grid.stall_decay * next.stall[i] *
                           std::max(v[i] - grid.v_rec, 0.0);
      next.stall[i] =
          std::clamp(next.stall[i] + kSubstepH * (grow - decay), 0.0, 1.0);
    }
    next.voltage = v;
  }

  next.step = state.step + 1;
  return next;
}

Eigen::Vector4d fault_context(const Task& task, double t, int n_buses) {
  Eigen::Vector4d c;
  c << static_cast<double>(task.fault_bus) / n_buses, task.fault_start,
      task.fault_duration, t - task.fault_start;
  return c;
}

Vec observe(const EnvState& state) {
  const int n = static_cast<int>(state.voltage.size());
  const int nc = static_cast<int>(state.load_frac.size());
  Vec obs(n + nc + 4);
  obs.head(n) = state.voltage;
  obs.segment(n, nc) = state.load_frac;
  obs.tail(4) = fault_context(state.task, state.t(), n);
  return obs;
}

Vec state_vector(const EnvState& state) {
  const int n = static_cast<int>(state.voltage.size());
  const int nc = static_cast<int>(state.load_frac.size());
  Vec s(n + nc);
  s.head(n) = state.voltage;
  s.tail(nc) = state.load_frac;
  return s;
}

int observation_dim(const GridModel& grid) {
  return grid.n_buses + grid.n_controlled() + 4;
}

int state_dim(const GridModel& grid) {
  return grid.n_buses + grid.n_controlled();
}

StepOutcome transition_outcome(const Vec& state_before, const Vec& action,
                               const Vec& state_after, const GridModel& grid,
                               double load_scale, double p_eps) {
  const int n = grid.n_buses;
  const int nc = grid.n_controlled();
  StepOutcome out;
  out.shed_pu = Vec::Zero(nc);
  for (int j = 0; j < nc; ++j) {
    const double before = state_before[n + j];
    const double after = state_after[n + j];
    const double weight = grid.base_load[grid.controlled[j]] * load_scale;
    out.shed_pu[j] = std::max(0.0, (before - after) * weight);
    if (action[j] < -p_eps && before < p_eps) ++out.invalid_count;
  }
  return out;
}

std::pair<std::vector<Task>, std::vector<Task>> default_task_sets(
    const GridModel& grid) {
  const std::vector<double> train_scales = {1.0, 1.15, 0.85};
  const std::vector<int> train_buses = {0, 2, 4};
  std::vector<Task> train;
  for (double scale : train_scales) {
    for (int bus : train_buses) {
      train.push_back(Task{scale, bus, 1.0, 0.1});
    }
  }
  std::vector<double> test_scales = train_scales;
  test_scales.push_back(0.92);
  std::vector<Task> test;
  for (double scale : test_scales) {
    for (int bus = 0; bus < grid.n_buses; ++bus) {
      test.push_back(Task{scale, bus, 1.0, 0.1});
    }
  }
  return {train, test};
}

}  // namespace mbpars
