#include "mbpars/pars.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <thread>

#include "mbpars/rng.hpp"

namespace mbpars {

DirectionBatch sample_directions(int dim, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample_directions: count < 1");
  Rng rng(derive_seed(seed, 0x64697273ULL));
  DirectionBatch batch;
  batch.deltas.reserve(count);
  for (int i = 0; i < count; ++i) {
    Vec d(dim);
    for (int j = 0; j < dim; ++j) d[j] = rng.normal();
    batch.deltas.push_back(std::move(d));
  }
  batch.reward_pos.assign(count, 0.0);
  batch.reward_neg.assign(count, 0.0);
  return batch;
}

std::vector<int> rank_directions(const std::vector<double>& reward_pos,
                                 const std::vector<double>& reward_neg) {
  std::vector<int> order(reward_pos.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::max(reward_pos[a], reward_neg[a]) >
           std::max(reward_pos[b], reward_neg[b]);
  });
  return order;
}

Vec update_theta(const Vec& theta, const DirectionBatch& batch, double alpha,
                 int top_b) {
  const int n = static_cast<int>(batch.deltas.size());
  if (top_b < 1 || top_b > n) {
    throw std::invalid_argument("update_theta: need 1 <= b <= N");
  }
  const std::vector<int> order =
      rank_directions(batch.reward_pos, batch.reward_neg);

  double sum = 0.0;
  for (int r = 0; r < top_b; ++r) {
    sum += batch.reward_pos[order[r]] + batch.reward_neg[order[r]];
  }
  const double mean = sum / (2.0 * top_b);
  double var = 0.0;
  for (int r = 0; r < top_b; ++r) {
    const double dp = batch.reward_pos[order[r]] - mean;
    const double dn = batch.reward_neg[order[r]] - mean;
    var += dp * dp + dn * dn;
  }
  var /= 2.0 * top_b;
  const double sigma = std::max(std::sqrt(var), 1e-8);

  Vec next = theta;
  const double scale = alpha / (top_b * sigma);
  for (int r = 0; r < top_b; ++r) {
    const int i = order[r];
    next += scale * (batch.reward_pos[i] - batch.reward_neg[i]) *
            batch.deltas[i];
  }
  return next;
}

std::pair<double, double> decay(double alpha, double nu, double epsilon) {
  if (epsilon <= 0.0 || epsilon > 1.0) {
    throw std::invalid_argument("decay: epsilon outside (0, 1]");
  }
  return {epsilon * alpha, epsilon * nu};
}

// --- Backends ----------------------------------------------------------------

namespace {

class GroundTruthSim : public EpisodeSim {
 public:
  GroundTruthSim(const GridModel& grid, std::atomic<long long>& counter)
      : grid_(&grid), counter_(&counter) {}

  void reset(const Task& task) override { state_ = mbpars::reset(*grid_, task); }
  void step(const Vec& action) override {
    state_ = mbpars::step(state_, action, *grid_);
    counter_->fetch_add(1, std::memory_order_relaxed);
  }
  Vec state_vec() const override { return state_vector(state_); }
  Eigen::Vector4d ctx() const override {
    return fault_context(state_.task, state_.t(), grid_->n_buses);
  }
  double t() const override { return state_.t(); }
  bool done() const override { return state_.done(); }

 private:
  const GridModel* grid_;
  std::atomic<long long>* counter_;
  EnvState state_;
};

class SurrogateSim : public EpisodeSim {
 public:
  SurrogateSim(const SurrogateModel& model, const GridModel& grid)
      : model_(&model), grid_(&grid) {}

  void reset(const Task& task) override {
    validate_task(task, *grid_);
    task_ = task;
    step_ = 0;
    const EnvState init = mbpars::reset(*grid_, task);
    state_ = state_vector(init);
  }

  void step(const Vec& action) override {
    if (done()) throw std::logic_error("surrogate sim: episode terminal");
    const Vec delta = predict_delta(*model_, state_, action, ctx());
    state_ += delta;
    // Keep the policy's view inside the physical envelope.
    const int n = grid_->n_buses;
    state_.head(n) = state_.head(n).cwiseMax(0.0).cwiseMin(kVoltageMax);
    state_.tail(grid_->n_controlled()) =
        state_.tail(grid_->n_controlled()).cwiseMax(0.0).cwiseMin(1.0);
    ++step_;
  }

  Vec state_vec() const override { return state_; }
  Eigen::Vector4d ctx() const override {
    return fault_context(task_, t(), grid_->n_buses);
  }
  double t() const override { return step_ * kControlDt; }
  bool done() const override { return step_ >= kEpisodeSteps; }

 private:
  const SurrogateModel* model_;
  const GridModel* grid_;
  Task task_;
  Vec state_;
  int step_ = 0;
};

}  // namespace

std::unique_ptr<EpisodeSim> GroundTruthBackend::make_sim() const {
  return std::make_unique<GroundTruthSim>(*grid_, samples_);
}

std::unique_ptr<EpisodeSim> SurrogateBackend::make_sim() const {
  return std::make_unique<SurrogateSim>(*model_, *grid_);
}

// --- Rollout -----------------------------------------------------------------

RolloutOutcome rollout(const LstmPolicy& policy, EpisodeSim& sim,
                       const Task& task, const RunningStats& frozen_stats,
                       const RewardParams& reward, const GridModel& grid,
                       double gamma, bool collect_trajectory) {
  sim.reset(task);
  LstmState lstm = initial_state(policy);
  const int obs_dim = static_cast<int>(sim.state_vec().size()) + 4;
  RolloutOutcome out;
  out.visited = RunningStats(obs_dim);

  Vec state = sim.state_vec();
  if (collect_trajectory) {
    out.traj.states.push_back(state);
    out.traj.context.push_back(sim.ctx());
  }
  double scale = 1.0;
  while (!sim.done()) {
    Vec obs(obs_dim);
    obs << state, sim.ctx();
    const Vec action = policy_step(policy, frozen_stats.normalize(obs), lstm);
    sim.step(action);
    const Vec next = sim.state_vec();

    const StepOutcome oc = transition_outcome(state, action, next, grid,
                                              task.load_scale, reward.p_eps);
    const double r =
        step_reward(next.head(grid.n_buses), oc.shed_pu, oc.invalid_count,
                    sim.t(), task.t_clear(), reward);
    out.episode_return += scale * r;
    scale *= gamma;
    out.shed_total += oc.shed_pu.sum();

    Vec obs_next(obs_dim);
    obs_next << next, sim.ctx();
    out.visited.update(obs_next);
    if (collect_trajectory) {
      out.traj.actions.push_back(action);
      out.traj.states.push_back(next);
      out.traj.context.push_back(sim.ctx());
    }
    state = next;
  }
  return out;
}

// --- Trainer -----------------------------------------------------------------

namespace {

// Runs jobs 0..count-1 on `workers` threads; each job writes only its own
// slot, so scheduling cannot change results.
void parallel_for_jobs(int count, int workers,
                       const std::function<void(int)>& job) {
  workers = std::max(1, workers);
  if (workers == 1 || count <= 1) {
    for (int j = 0; j < count; ++j) job(j);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> threads;
  const int n_threads = std::min(workers, count);
  threads.reserve(n_threads);
  for (int w = 0; w < n_threads; ++w) {
    threads.emplace_back([&]() {
      for (int j = next.fetch_add(1); j < count; j = next.fetch_add(1)) {
        job(j);
      }
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace

ParsTrainer::ParsTrainer(ParsConfig config, const GridModel& grid,
                         std::vector<Task> train_tasks, RewardParams reward,
                         LstmPolicy initial_policy, RunningStats initial_stats,
                         SurrogateModel* surrogate,
                         const MultiStepDataset* offline,
                         SurrogateTrainOptions retrain_options,
                         double wall_offset_seconds)
    : config_(config),
      grid_(&grid),
      tasks_(std::move(train_tasks)),
      reward_(reward),
      policy_(std::move(initial_policy)),
      stats_(std::move(initial_stats)),
      surrogate_(surrogate),
      offline_(offline),
      retrain_options_(retrain_options),
      gt_backend_(grid),
      alpha_(config.step_size),
      nu_(config.noise_std),
      wall_offset_(wall_offset_seconds),
      start_(std::chrono::steady_clock::now()) {
  if (config_.num_directions < 1 || config_.top_directions < 1 ||
      config_.top_directions > config_.num_directions) {
    throw std::invalid_argument("pars: need 1 <= b <= N");
  }
  if (config_.rollouts_per_direction < 1 || config_.tasks_per_eval < 1) {
    throw std::invalid_argument("pars: need m >= 1 and p >= 1");
  }
  if (tasks_.empty()) throw std::invalid_argument("pars: empty task set");
  theta_ = flatten(policy_);
  if (stats_.dim() != observation_dim(grid)) {
    throw std::invalid_argument("pars: stats dimension mismatch");
  }
  if (surrogate_) {
    surrogate_backend_ = std::make_unique<SurrogateBackend>(*surrogate_, grid);
    online_.horizon = surrogate_->horizon;
    online_.provenance = Provenance::kOnline;
  }
}

LstmPolicy ParsTrainer::policy_snapshot() const {
  LstmPolicy p = policy_;
  unflatten(p, theta_);
  return p;
}

IterationReport ParsTrainer::run_iteration() {
  const int k = ++iteration_;
  const int n_dirs = config_.num_directions;
  const int m = config_.rollouts_per_direction;
  const int p = config_.tasks_per_eval;
  const RolloutBackend& train_backend =
      surrogate_backend_ ? static_cast<const RolloutBackend&>(*surrogate_backend_)
                         : static_cast<const RolloutBackend&>(gt_backend_);

  DirectionBatch batch = sample_directions(
      static_cast<int>(theta_.size()), n_dirs,
      derive_seed(config_.seed, 0x697465ULL, k));

  // Tasks are drawn per direction and shared by both signs.
  std::vector<std::vector<int>> direction_tasks(n_dirs);
  for (int i = 0; i < n_dirs; ++i) {
    Rng rng(derive_seed(config_.seed, 0x7461736bULL, k, i));
    for (int s = 0; s < p; ++s) {
      direction_tasks[i].push_back(
          static_cast<int>(rng.uniform_int(tasks_.size())));
    }
  }

  const int n_jobs = 2 * n_dirs;
  std::vector<double> job_reward(n_jobs, 0.0);
  std::vector<RunningStats> job_stats(n_jobs);
  parallel_for_jobs(n_jobs, config_.workers, [&](int j) {
    const int dir = j / 2;
    const double sign = (j % 2 == 0) ? 1.0 : -1.0;
    LstmPolicy perturbed = policy_;
    unflatten(perturbed, theta_ + sign * nu_ * batch.deltas[dir]);
    RunningStats visited(observation_dim(*grid_));
    double total = 0.0;
    for (int r = 0; r < m; ++r) {
      const Task& task = tasks_[direction_tasks[dir][r % p]];
      auto sim = train_backend.make_sim();
      RolloutOutcome oc = rollout(perturbed, *sim, task, stats_, reward_,
                                  *grid_, config_.gamma);
      total += oc.episode_return;
      visited.merge(oc.visited);
    }
    job_reward[j] = total / m;
    job_stats[j] = std::move(visited);
  });
  for (int i = 0; i < n_dirs; ++i) {
    batch.reward_pos[i] = job_reward[2 * i];
    batch.reward_neg[i] = job_reward[2 * i + 1];
  }

  theta_ = update_theta(theta_, batch, alpha_, config_.top_directions);

  // Ground-truth evaluation over every task with the updated policy; these
  // rollouts are the only ground-truth interaction in model-based runs and
  // also supply the online dataset.
  LstmPolicy current = policy_snapshot();
  const int n_tasks = static_cast<int>(tasks_.size());
  std::vector<RolloutOutcome> eval(n_tasks);
  parallel_for_jobs(n_tasks, config_.workers, [&](int ti) {
    auto sim = gt_backend_.make_sim();
    eval[ti] = rollout(current, *sim, tasks_[ti], stats_, reward_, *grid_,
                       config_.gamma, surrogate_ != nullptr);
  });

  double eval_sum = 0.0;
  for (int ti = 0; ti < n_tasks; ++ti) {
    eval_sum += eval[ti].episode_return;
    if (surrogate_) {
      eval[ti].traj.episode_id = next_episode_id_++;
      auto tuples = make_multistep(eval[ti].traj, online_.horizon);
      online_.tuples.insert(online_.tuples.end(),
                            std::make_move_iterator(tuples.begin()),
                            std::make_move_iterator(tuples.end()));
    }
  }

  IterationReport report;
  report.iteration = k;
  report.mean_eval_reward = eval_sum / n_tasks;
  report.alpha = alpha_;
  report.nu = nu_;

  if (surrogate_ && offline_ && config_.update_frequency > 0 &&
      k % config_.update_frequency == 0) {
    const Vec before = flatten(surrogate_->net);
    try {
      const RetrainResult rr =
          retrain(*surrogate_, online_, *offline_, retrain_options_,
                  derive_seed(config_.seed, 0x726574ULL, k));
      report.retrained = rr.ran;
      if (rr.ran) report.surrogate_val_loss = rr.val_after;
    } catch (const TrainingDivergence&) {
      unflatten(surrogate_->net, before);
      report.surrogate_diverged = true;
    }
  }

  std::tie(alpha_, nu_) = decay(alpha_, nu_, config_.decay_rate);

  // Deterministic reduction: job partials in job order, then eval partials
  // in task order. The merged statistics take effect next iteration.
  for (int j = 0; j < n_jobs; ++j) stats_.merge(job_stats[j]);
  for (int ti = 0; ti < n_tasks; ++ti) stats_.merge(eval[ti].visited);

  report.ground_truth_samples = gt_backend_.samples_used();
  report.wall_seconds =
      wall_offset_ +
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
          .count();
  return report;
}

std::vector<IterationReport> ParsTrainer::run(
    const std::function<void(const IterationReport&)>& on_iteration) {
  std::vector<IterationReport> reports;
  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int k = 0; k < config_.iterations; ++k) {
    IterationReport report = run_iteration();
    if (on_iteration) on_iteration(report);
    const double min_delta =
        config_.plateau_min_delta_frac * std::max(std::abs(best), 1e-9);
    if (report.mean_eval_reward > best + min_delta) {
      best = report.mean_eval_reward;
      since_best = 0;
    } else {
      ++since_best;
    }
    reports.push_back(std::move(report));
    if (config_.plateau_patience > 0 &&
        since_best >= config_.plateau_patience) {
      break;
    }
  }
  return reports;
}

void write_report_csv_header(std::ostream& out) {
  out << "iteration,wall_seconds,mean_eval_reward,ground_truth_samples,alpha,"
         "nu,surrogate_val_loss\n";
}

void write_report_csv_row(std::ostream& out, const IterationReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.3f,%.17g,%lld,%.17g,%.17g,%.17g\n",
                r.iteration, r.wall_seconds, r.mean_eval_reward,
                r.ground_truth_samples, r.alpha, r.nu, r.surrogate_val_loss);
  out << buf;
}

}  // namespace mbpars
