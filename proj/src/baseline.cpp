#include "mbpars/baseline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "mbpars/rng.hpp"

namespace mbpars {

UvlsController::UvlsController(UvlsRule rule, std::vector<int> controlled,
                               int n_buses)
    : rule_(rule),
      controlled_(std::move(controlled)),
      n_buses_(n_buses),
      below_seconds_(controlled_.size(), 0.0) {}

void UvlsController::reset() {
  std::fill(below_seconds_.begin(), below_seconds_.end(), 0.0);
}

Vec UvlsController::action(const Vec& observation) {
  Vec a = Vec::Zero(static_cast<Eigen::Index>(controlled_.size()));
  for (std::size_t j = 0; j < controlled_.size(); ++j) {
    const double v = observation[controlled_[j]];
    if (v < rule_.trigger_v) {
      below_seconds_[j] += kControlDt;
      if (below_seconds_[j] >= rule_.dwell_s) a[j] = rule_.shed_step;
    } else {
      below_seconds_[j] = 0.0;
    }
  }
  return a;
}

MultiStepDataset generate_offline(const GridModel& grid,
                                  const std::vector<Task>& tasks,
                                  int episodes_per_task, double noise_std,
                                  int horizon, std::uint64_t seed,
                                  const UvlsRule& rule) {
  if (noise_std < 0.0) {
    throw std::invalid_argument("generate_offline: noise_std must be >= 0");
  }
  MultiStepDataset data;
  data.horizon = horizon;
  data.provenance = Provenance::kOffline;

  int episode_id = 0;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    for (int e = 0; e < episodes_per_task; ++e, ++episode_id) {
      Rng rng(derive_seed(seed, 0x6f66666cULL, ti, e));
      UvlsController uvls(rule, grid.controlled, grid.n_buses);
      EnvState state = reset(grid, tasks[ti]);

      Trajectory traj;
      traj.episode_id = episode_id;
      traj.states.push_back(state_vector(state));
      traj.context.push_back(
          fault_context(state.task, state.t(), grid.n_buses));
      while (!state.done()) {
        Vec a = uvls.action(observe(state));
        for (Eigen::Index j = 0; j < a.size(); ++j) {
          if (noise_std > 0.0) a[j] += rng.normal(0.0, noise_std);
          a[j] = std::clamp(a[j], kActionLo, kActionHi);
        }
        state = step(state, a, grid);
        traj.actions.push_back(a);
        traj.states.push_back(state_vector(state));
        traj.context.push_back(
            fault_context(state.task, state.t(), grid.n_buses));
      }
      auto tuples = make_multistep(traj, horizon);
      data.tuples.insert(data.tuples.end(),
                         std::make_move_iterator(tuples.begin()),
                         std::make_move_iterator(tuples.end()));
    }
  }
  return data;
}

TrainReport imitate(LstmPolicy& policy, const MultiStepDataset& offline,
                    const ImitationOptions& options, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<Trajectory> episodes = reconstruct_trajectories(offline);
  if (episodes.empty()) {
    throw std::invalid_argument("imitate: no episodes in dataset");
  }

  // Policy inputs are raw observations: [state, fault context].
  std::vector<std::vector<Vec>> obs_seqs;
  std::vector<std::vector<Vec>> act_seqs;
  for (const Trajectory& traj : episodes) {
    std::vector<Vec> obs;
    std::vector<Vec> act;
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      Vec o(traj.states[t].size() + 4);
      o << traj.states[t], traj.context[t];
      obs.push_back(std::move(o));
      act.push_back(traj.actions[t]);
    }
    obs_seqs.push_back(std::move(obs));
    act_seqs.push_back(std::move(act));
  }

  Rng rng(derive_seed(seed, 0x696d6974ULL));
  std::vector<std::size_t> order(obs_seqs.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto n_val = std::min(
      static_cast<std::size_t>(options.val_frac * order.size()),
      order.size() - 1);
  std::vector<std::size_t> val_idx(order.end() - n_val, order.end());
  order.resize(order.size() - n_val);

  auto eval_loss = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i : idx) {
      total += bc_loss(policy, {obs_seqs[i]}, {act_seqs[i]});
    }
    return total / static_cast<double>(idx.size());
  };

  TrainReport report;
  Vec theta = flatten(policy);
  Optimizer opt(options.optimizer, options.lr, theta.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double running = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(options.batch_episodes)) {
      const std::size_t n = std::min(
          order.size() - at, static_cast<std::size_t>(options.batch_episodes));
      std::vector<std::vector<Vec>> obs_batch;
      std::vector<std::vector<Vec>> act_batch;
      for (std::size_t k = 0; k < n; ++k) {
        obs_batch.push_back(obs_seqs[order[at + k]]);
        act_batch.push_back(act_seqs[order[at + k]]);
      }
      LstmGrads grads = zero_grads(policy);
      const double loss = bc_loss_and_grad(policy, obs_batch, act_batch,
                                           options.tbptt_len, &grads);
      opt.step(theta, flatten_grads(policy, grads));
      unflatten(policy, theta);
      running += loss;
      ++batches;
    }
    report.train_loss.push_back(running / std::max(batches, 1));
    report.val_loss.push_back(val_idx.empty() ? report.train_loss.back()
                                              : eval_loss(val_idx));
    if (!std::isfinite(report.val_loss.back())) {
      throw TrainingDivergence("behavior cloning diverged");
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

}  // namespace mbpars
