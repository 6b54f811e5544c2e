#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mbpars/pars.hpp"
#include "mbpars/rng.hpp"

using namespace mbpars;

namespace {

LstmPolicy zero_policy(const GridModel& grid, int hidden = 8) {
  Rng rng(0);
  LstmPolicy p =
      make_lstm_policy(observation_dim(grid), hidden, grid.n_controlled(), rng);
  unflatten(p, Vec::Zero(p.param_count()));
  return p;
}

ParsTrainer make_trainer(const ParsConfig& cfg, const GridModel& grid,
                         std::vector<Task> tasks,
                         SurrogateModel* surrogate = nullptr,
                         const MultiStepDataset* offline = nullptr) {
  Rng rng(cfg.seed + 100);
  LstmPolicy policy =
      make_lstm_policy(observation_dim(grid), 8, grid.n_controlled(), rng);
  return ParsTrainer(cfg, grid, std::move(tasks), RewardParams{},
                     std::move(policy), RunningStats(observation_dim(grid)),
                     surrogate, offline, SurrogateTrainOptions{});
}

}  // namespace

TEST_CASE("direction sampling is seeded and standard normal") {
  const DirectionBatch a = sample_directions(13 * 4, 6, 42);
  const DirectionBatch b = sample_directions(13 * 4, 6, 42);
  REQUIRE(a.deltas.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(a.deltas[i].size() == 52);
    REQUIRE(a.deltas[i] == b.deltas[i]);
  }
  const DirectionBatch c = sample_directions(52, 6, 43);
  CHECK(a.deltas[0] != c.deltas[0]);

  // Empirical first/second moments over 1e5 draws.
  const DirectionBatch big = sample_directions(100000, 1, 7);
  const double mean = big.deltas[0].mean();
  const double sd = std::sqrt(
      (big.deltas[0].array() - mean).square().sum() / big.deltas[0].size());
  CHECK(std::abs(mean) < 3.0 / std::sqrt(100000.0));
  CHECK(sd == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("update rule reproduces the scalar hand case") {
  DirectionBatch batch;
  batch.deltas = {Vec::Constant(1, 1.0)};
  batch.reward_pos = {2.0};
  batch.reward_neg = {0.0};
  const Vec next = update_theta(Vec::Zero(1), batch, 0.1, 1);
  // sigma of {2, 0} is 1, so the step is 0.1 / (1 * 1) * (2 - 0) * 1.
  CHECK(next[0] == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("equal pair rewards leave theta unchanged") {
  Rng rng(3);
  DirectionBatch batch;
  for (int i = 0; i < 8; ++i) {
    Vec d(5);
    for (int j = 0; j < 5; ++j) d[j] = rng.normal();
    batch.deltas.push_back(d);
    const double r = rng.normal(0.0, 10.0);
    batch.reward_pos.push_back(r);
    batch.reward_neg.push_back(r);
  }
  Vec theta(5);
  theta.setRandom();
  CHECK(update_theta(theta, batch, 0.3, 4) == theta);
}

TEST_CASE("selection keeps every direction when b equals N") {
  Rng rng(4);
  DirectionBatch batch;
  for (int i = 0; i < 6; ++i) {
    Vec d(3);
    for (int j = 0; j < 3; ++j) d[j] = rng.normal();
    batch.deltas.push_back(d);
    batch.reward_pos.push_back(rng.normal(0, 5));
    batch.reward_neg.push_back(rng.normal(0, 5));
  }
  Vec theta = Vec::Zero(3);
  const Vec a = update_theta(theta, batch, 0.2, 6);

  // Reversing the stored order must not matter when every direction is kept:
  // the update sums in rank order either way.
  DirectionBatch reversed;
  for (int i = 5; i >= 0; --i) {
    reversed.deltas.push_back(batch.deltas[i]);
    reversed.reward_pos.push_back(batch.reward_pos[i]);
    reversed.reward_neg.push_back(batch.reward_neg[i]);
  }
  const Vec b = update_theta(theta, reversed, 0.2, 6);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("top-b selection is invariant to constant reward shifts") {
  Rng rng(5);
  std::vector<double> rp, rn;
  for (int i = 0; i < 12; ++i) {
    rp.push_back(rng.normal(0, 3));
    rn.push_back(rng.normal(0, 3));
  }
  const std::vector<int> base = rank_directions(rp, rn);
  for (const double shift : {-1000.0, -3.5, 12.25, 4e6}) {
    std::vector<double> rp2 = rp, rn2 = rn;
    for (auto& x : rp2) x += shift;
    for (auto& x : rn2) x += shift;
    CHECK(rank_directions(rp2, rn2) == base);
  }
}

TEST_CASE("geometric decay") {
  auto [a1, n1] = decay(0.5, 0.2, 1.0);
  CHECK(a1 == 0.5);
  CHECK(n1 == 0.2);

  double alpha = 1.0;
  double nu = 2.0;
  for (int k = 0; k < 100; ++k) std::tie(alpha, nu) = decay(alpha, nu, 0.9985);
  CHECK(alpha == doctest::Approx(std::pow(0.9985, 100)).epsilon(1e-12));
  CHECK(alpha == doctest::Approx(0.8607).epsilon(1e-3));

  auto [a2, n2] = decay(0.05, 0.1, 0.9999);
  CHECK(n2 == doctest::Approx(0.09999).epsilon(1e-12));
  CHECK_THROWS_AS(decay(1.0, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("zero-weight policy on a fault-free task earns exactly zero") {
  const GridModel grid = build_grid(GridConfig{});
  const LstmPolicy policy = zero_policy(grid);
  const Task no_fault{1.0, 0, 100.0, 0.1};  // fault beyond the horizon
  GroundTruthBackend backend(grid);
  auto sim = backend.make_sim();
  const RolloutOutcome out =
      rollout(policy, *sim, no_fault, RunningStats(observation_dim(grid)),
              RewardParams{}, grid, 1.0);
  CHECK(out.episode_return == 0.0);
  CHECK(out.shed_total == 0.0);
}

TEST_CASE("sample counters: ground truth counts, surrogate does not") {
  const GridModel grid = build_grid(GridConfig{});
  const LstmPolicy policy = zero_policy(grid);
  const Task task{1.0, 0, 1.0, 0.1};
  const RunningStats stats(observation_dim(grid));

  GroundTruthBackend gt(grid);
  auto sim = gt.make_sim();
  rollout(policy, *sim, task, stats, RewardParams{}, grid, 1.0);
  CHECK(gt.samples_used() == kEpisodeSteps);

  SurrogateModel model =
      make_surrogate(grid.n_buses, grid.n_controlled(), {8}, 5, 1.0, 1);
  SurrogateBackend sb(model, grid);
  auto ssim = sb.make_sim();
  const RolloutOutcome out =
      rollout(policy, *ssim, task, stats, RewardParams{}, grid, 1.0);
  CHECK(gt.samples_used() == kEpisodeSteps);  // untouched by surrogate runs
  CHECK(out.visited.count() == kEpisodeSteps);
}

TEST_CASE("zero exploration noise freezes the policy update") {
  const GridModel grid = build_grid(GridConfig{});
  const auto [train, test] = default_task_sets(grid);
  ParsConfig cfg;
  cfg.num_directions = 4;
  cfg.top_directions = 2;
  cfg.rollouts_per_direction = 1;
  cfg.noise_std = 0.0;  // r+ == r- for every direction
  cfg.step_size = 0.1;
  cfg.iterations = 1;
  cfg.seed = 5;
  ParsTrainer trainer = make_trainer(cfg, grid, train);
  const Vec before = trainer.theta();
  trainer.run_iteration();
  CHECK(trainer.theta() == before);
}

TEST_CASE("sample accounting per iteration") {
  const GridModel grid = build_grid(GridConfig{});
  const std::vector<Task> two_tasks = {Task{1.0, 0, 1.0, 0.1},
                                       Task{1.15, 2, 1.0, 0.1}};

  // Model-based: training rollouts hit the surrogate; only the per-task
  // evaluation touches the simulator.
  SurrogateModel model =
      make_surrogate(grid.n_buses, grid.n_controlled(), {8}, 5, 1.0, 2);
  MultiStepDataset offline;
  offline.horizon = 5;
  ParsConfig mb;
  mb.num_directions = 8;
  mb.top_directions = 4;
  mb.rollouts_per_direction = 1;
  mb.iterations = 1;
  mb.update_frequency = 0;  // no retraining in this test
  mb.seed = 6;
  ParsTrainer mb_trainer = make_trainer(mb, grid, two_tasks, &model, &offline);
  const IterationReport r1 = mb_trainer.run_iteration();
  CHECK(r1.ground_truth_samples == 2 * kEpisodeSteps);

  // Model-free: every training rollout also consumes simulator samples.
  ParsConfig mf = mb;
  mf.seed = 7;
  ParsTrainer mf_trainer =
      make_trainer(mf, grid, {Task{1.0, 0, 1.0, 0.1}});
  const IterationReport r2 = mf_trainer.run_iteration();
  CHECK(r2.ground_truth_samples == 8 * 2 * 1 * kEpisodeSteps + kEpisodeSteps);
}

TEST_CASE("retraining fires exactly on the update frequency") {
  const GridModel grid = build_grid(GridConfig{});
  const auto [train, test] = default_task_sets(grid);
  SurrogateModel model =
      make_surrogate(grid.n_buses, grid.n_controlled(), {8}, 5, 1.0, 3);
  const MultiStepDataset offline =
      generate_offline(grid, {train[0]}, 2, 0.03, 5, 11);
  ParsConfig cfg;
  cfg.num_directions = 2;
  cfg.top_directions = 1;
  cfg.rollouts_per_direction = 1;
  cfg.iterations = 5;
  cfg.update_frequency = 5;
  cfg.seed = 8;
  ParsTrainer trainer =
      make_trainer(cfg, grid, {train[0]}, &model, &offline);
  for (int k = 1; k <= 5; ++k) {
    const IterationReport r = trainer.run_iteration();
    CHECK(r.retrained == (k == 5));
  }
}

TEST_CASE("training is identical across worker counts") {
  const GridModel grid = build_grid(GridConfig{});
  const auto [train, test] = default_task_sets(grid);
  auto run = [&](int workers) {
    ParsConfig cfg;
    cfg.num_directions = 6;
    cfg.top_directions = 3;
    cfg.rollouts_per_direction = 2;
    cfg.tasks_per_eval = 2;
    cfg.iterations = 3;
    cfg.seed = 99;
    cfg.workers = workers;
    ParsTrainer trainer = make_trainer(cfg, grid, train);
    std::vector<IterationReport> reports = trainer.run();
    return std::make_tuple(Vec(trainer.theta()),
                           trainer.observation_stats().raw_mean(),
                           trainer.observation_stats().raw_m2(), reports);
  };
  const auto [theta1, mean1, m21, rep1] = run(1);
  const auto [theta8, mean8, m28, rep8] = run(8);
  REQUIRE(theta1 == theta8);
  REQUIRE(mean1 == mean8);
  REQUIRE(m21 == m28);
  REQUIRE(rep1.size() == rep8.size());
  for (std::size_t k = 0; k < rep1.size(); ++k) {
    CHECK(rep1[k].mean_eval_reward == rep8[k].mean_eval_reward);
    CHECK(rep1[k].ground_truth_samples == rep8[k].ground_truth_samples);
    CHECK(rep1[k].alpha == rep8[k].alpha);
  }
}

TEST_CASE("rollouts update observation statistics next iteration only") {
  const GridModel grid = build_grid(GridConfig{});
  const auto [train, test] = default_task_sets(grid);
  ParsConfig cfg;
  cfg.num_directions = 2;
  cfg.top_directions = 1;
  cfg.rollouts_per_direction = 1;
  cfg.iterations = 2;
  cfg.seed = 12;
  ParsTrainer trainer = make_trainer(cfg, grid, train);
  CHECK(trainer.observation_stats().count() == 0);
  trainer.run_iteration();
  // 2N*m training rollouts + |tasks| eval rollouts, 80 post-step obs each.
  const long long expected = (2 * 2 * 1 + 9) * 80LL;
  CHECK(trainer.observation_stats().count() == expected);
}
