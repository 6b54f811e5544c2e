#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "mbpars/baseline.hpp"
#include "mbpars/dataset.hpp"
#include "mbpars/rng.hpp"

using namespace mbpars;

namespace {

Trajectory synthetic_trajectory(int steps, int state_dim, int action_dim,
                                std::uint64_t seed, int episode_id = 0) {
  Rng rng(seed);
  Trajectory traj;
  traj.episode_id = episode_id;
  for (int t = 0; t <= steps; ++t) {
    Vec s(state_dim);
    for (int d = 0; d < state_dim; ++d) s[d] = rng.uniform();
    traj.states.push_back(s);
    traj.context.push_back(Eigen::Vector4d(0.5, 1.0, 0.1, t * kControlDt - 1.0));
    if (t < steps) {
      Vec a(action_dim);
      for (int d = 0; d < action_dim; ++d) a[d] = -rng.uniform(0.0, 0.2);
      traj.actions.push_back(a);
    }
  }
  return traj;
}

MultiStepDataset synthetic_dataset(int episodes, int steps, int horizon,
                                   std::uint64_t seed,
                                   Provenance prov = Provenance::kOffline) {
  MultiStepDataset data;
  data.horizon = horizon;
  data.provenance = prov;
  for (int e = 0; e < episodes; ++e) {
    auto tuples =
        make_multistep(synthetic_trajectory(steps, 9, 3, seed + e, e), horizon);
    data.tuples.insert(data.tuples.end(), tuples.begin(), tuples.end());
  }
  return data;
}

}  // namespace

TEST_CASE("sliding window counts") {
  const Trajectory traj = synthetic_trajectory(80, 9, 3, 1);
  CHECK(make_multistep(traj, 5).size() == 76);
  CHECK(make_multistep(traj, 1).size() == 80);
  CHECK(make_multistep(traj, 80).size() == 1);
  CHECK(make_multistep(traj, 81).empty());  // too short is not an error

  const auto single = make_multistep(traj, 1);
  for (const auto& tup : single) {
    CHECK(tup.states.size() == 2);
    CHECK(tup.actions.size() == 1);
  }
}

TEST_CASE("windows carry the first-step context and reconstruct exactly") {
  const Trajectory traj = synthetic_trajectory(30, 4, 2, 7);
  const auto tuples = make_multistep(traj, 5);
  for (std::size_t t = 0; t < tuples.size(); ++t) {
    CHECK(tuples[t].t0 == static_cast<int>(t));
    CHECK(tuples[t].context == traj.context[t]);
    for (int k = 0; k <= 5; ++k) {
      REQUIRE(tuples[t].states[k] == traj.states[t + k]);
    }
    for (int k = 0; k < 5; ++k) {
      REQUIRE(tuples[t].actions[k] == traj.actions[t + k]);
    }
  }

  MultiStepDataset data;
  data.horizon = 5;
  data.tuples = tuples;
  const auto rebuilt = reconstruct_trajectories(data);
  REQUIRE(rebuilt.size() == 1);
  REQUIRE(rebuilt[0].states.size() == traj.states.size());
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    REQUIRE(rebuilt[0].states[t] == traj.states[t]);
  }
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    REQUIRE(rebuilt[0].actions[t] == traj.actions[t]);
  }
}

TEST_CASE("mix sizes and identity cases") {
  const MultiStepDataset offline = synthetic_dataset(5, 84, 5, 11);
  REQUIRE(offline.size() == 400);
  MultiStepDataset online = synthetic_dataset(2, 54, 5, 99, Provenance::kOnline);
  REQUIRE(online.size() == 100);

  const MultiStepDataset mixed = mix(online, offline, 0.25, 42);
  CHECK(mixed.size() == 200);

  CHECK(mix(online, offline, 0.0, 42).size() == online.size());
  CHECK(mix(online, offline, 1.0, 42).size() ==
        online.size() + offline.size());
}

TEST_CASE("mix is seeded and duplicate-free") {
  const MultiStepDataset offline = synthetic_dataset(5, 84, 5, 11);
  MultiStepDataset online = synthetic_dataset(1, 54, 5, 99,
                                              Provenance::kOnline);
  for (auto& tup : online.tuples) tup.episode_id += 100;
  const MultiStepDataset a = mix(online, offline, 0.25, 7);
  const MultiStepDataset b = mix(online, offline, 0.25, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.tuples[i].episode_id == b.tuples[i].episode_id);
    CHECK(a.tuples[i].t0 == b.tuples[i].t0);
  }
  const MultiStepDataset c = mix(online, offline, 0.25, 8);
  bool any_differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.tuples[i].episode_id != c.tuples[i].episode_id ||
        a.tuples[i].t0 != c.tuples[i].t0) {
      any_differ = true;
    }
  }
  CHECK(any_differ);

  // No offline tuple sampled twice.
  std::set<std::pair<int, int>> seen;
  int offline_count = 0;
  for (const auto& tup : a.tuples) {
    if (tup.episode_id < 5) {  // offline episodes use ids 0..4
      ++offline_count;
      CHECK(seen.insert({tup.episode_id, tup.t0}).second);
    }
  }
  CHECK(offline_count == 100);
}

TEST_CASE("mix rejects mismatched shapes") {
  const MultiStepDataset offline = synthetic_dataset(1, 20, 5, 1);
  MultiStepDataset online;
  online.horizon = 5;
  auto tuples = make_multistep(synthetic_trajectory(20, 4, 3, 2), 5);
  online.tuples.assign(tuples.begin(), tuples.end());
  CHECK_THROWS_AS(mix(online, offline, 0.5, 1), std::invalid_argument);
}

TEST_CASE("running stats: hand example") {
  RunningStats stats(1);
  for (double x : {1.0, 2.0, 3.0}) stats.update(Vec::Constant(1, x));
  CHECK(stats.mean()[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(stats.stddev()[0] ==
        doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(stats.normalize(Vec::Constant(1, 3.0))[0] ==
        doctest::Approx(1.0 / std::sqrt(2.0 / 3.0)).epsilon(1e-12));
  CHECK(stats.normalize(Vec::Constant(1, 3.0))[0] ==
        doctest::Approx(1.2247448714).epsilon(1e-9));
}

TEST_CASE("running stats: empty stats normalize as identity") {
  RunningStats stats(4);
  Vec obs(4);
  obs << -1.0, 0.5, 2.0, 7.0;
  CHECK(stats.normalize(obs) == obs);
  CHECK(stats.mean().cwiseAbs().maxCoeff() == 0.0);
  CHECK(stats.stddev().minCoeff() == 1.0);
}

TEST_CASE("running stats: constant stream hits the sigma floor") {
  RunningStats stats(2);
  for (int k = 0; k < 50; ++k) stats.update(Vec::Constant(2, 3.25));
  CHECK(stats.stddev()[0] == kSigmaFloor);
  CHECK(stats.normalize(Vec::Constant(2, 3.25)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("running stats: streaming matches the two-pass batch oracle") {
  Rng rng(123);
  double worst_mean = 0.0;
  double worst_std = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(60));
    const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
    std::vector<double> xs(n);
    RunningStats stats(1);
    for (int i = 0; i < n; ++i) {
      xs[i] = rng.normal(rng.uniform(-5.0, 5.0), scale);
      stats.update(Vec::Constant(1, xs[i]));
    }
    // Independent two-pass oracle.
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n;
    const double sd = std::sqrt(var);

    const double mean_err =
        std::abs(stats.mean()[0] - mean) / std::max(std::abs(mean), 1e-30);
    worst_mean = std::max(worst_mean, mean_err);
    if (sd > 0.0) {
      worst_std = std::max(
          worst_std, std::abs(stats.stddev()[0] - sd) / std::max(sd, 1e-30));
    }
  }
  CHECK(worst_mean < 1e-9);
  CHECK(worst_std < 1e-9);
}

TEST_CASE("running stats: deterministic pairwise merge") {
  Rng rng(5);
  // Build per-chunk partials, then fold them in index order; merging must be
  // independent of how the chunks were produced.
  const int chunks = 16;
  std::vector<RunningStats> parts(chunks, RunningStats(3));
  RunningStats sequential(3);
  for (int c = 0; c < chunks; ++c) {
    const int n = 1 + static_cast<int>(rng.uniform_int(40));
    for (int i = 0; i < n; ++i) {
      Vec x(3);
      for (int d = 0; d < 3; ++d) x[d] = rng.normal(d, 1.0 + d);
      parts[c].update(x);
    }
  }
  for (int c = 0; c < chunks; ++c) sequential.merge(parts[c]);

  RunningStats refolded(3);
  for (int c = 0; c < chunks; ++c) refolded.merge(parts[c]);
  CHECK(refolded.count() == sequential.count());
  CHECK(refolded.raw_mean() == sequential.raw_mean());
  CHECK(refolded.raw_m2() == sequential.raw_m2());

  // And the merged result tracks the one-stream reference closely.
  RunningStats one_stream(3);
  Rng rng2(5);
  for (int c = 0; c < chunks; ++c) {
    const int n = 1 + static_cast<int>(rng2.uniform_int(40));
    for (int i = 0; i < n; ++i) {
      Vec x(3);
      for (int d = 0; d < 3; ++d) x[d] = rng2.normal(d, 1.0 + d);
      one_stream.update(x);
    }
  }
  CHECK(one_stream.count() == sequential.count());
  for (int d = 0; d < 3; ++d) {
    CHECK(sequential.mean()[d] ==
          doctest::Approx(one_stream.mean()[d]).epsilon(1e-12));
    CHECK(sequential.stddev()[d] ==
          doctest::Approx(one_stream.stddev()[d]).epsilon(1e-12));
  }
}

TEST_CASE("jsonl round trip is lossless") {
  const MultiStepDataset data = synthetic_dataset(3, 24, 5, 77);
  const std::string path = "/tmp/mbpars_test_dataset.jsonl";
  save_dataset_jsonl(path, data, "deadbeef");
  const MultiStepDataset loaded = load_dataset_jsonl(path);
  REQUIRE(loaded.size() == data.size());
  CHECK(loaded.horizon == data.horizon);
  for (std::size_t i = 0; i < data.size(); ++i) {
    REQUIRE(loaded.tuples[i].states.size() == data.tuples[i].states.size());
    for (std::size_t k = 0; k < data.tuples[i].states.size(); ++k) {
      REQUIRE(loaded.tuples[i].states[k] == data.tuples[i].states[k]);
    }
    for (std::size_t k = 0; k < data.tuples[i].actions.size(); ++k) {
      REQUIRE(loaded.tuples[i].actions[k] == data.tuples[i].actions[k]);
    }
    REQUIRE(loaded.tuples[i].context == data.tuples[i].context);
  }
  std::filesystem::remove(path);
}

TEST_CASE("jsonl serialization is byte-stable") {
  const MultiStepDataset data = synthetic_dataset(2, 20, 3, 13);
  save_dataset_jsonl("/tmp/mbpars_ds_a.jsonl", data, "cafe");
  save_dataset_jsonl("/tmp/mbpars_ds_b.jsonl", data, "cafe");
  std::ifstream a("/tmp/mbpars_ds_a.jsonl"), b("/tmp/mbpars_ds_b.jsonl");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  std::filesystem::remove("/tmp/mbpars_ds_a.jsonl");
  std::filesystem::remove("/tmp/mbpars_ds_b.jsonl");
}
