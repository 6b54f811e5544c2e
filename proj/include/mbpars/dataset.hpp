#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mbpars/grid.hpp"

namespace mbpars {

// One episode: states s_0..s_T, actions a_0..a_{T-1}, fault context per step.
struct Trajectory {
  std::vector<Vec> states;
  std::vector<Vec> actions;
  std::vector<Eigen::Vector4d> context;
  int episode_id = 0;
};

// Sliding M-step window: M+1 states, M actions, context of the first step.
struct MultiStepTuple {
  std::vector<Vec> states;
  std::vector<Vec> actions;
  Eigen::Vector4d context;
  int episode_id = 0;
  int t0 = 0;
};

enum class Provenance { kOffline, kOnline };

struct MultiStepDataset {
  int horizon = 1;  // M
  Provenance provenance = Provenance::kOffline;
  std::vector<MultiStepTuple> tuples;

  bool empty() const { return tuples.empty(); }
  std::size_t size() const { return tuples.size(); }
  int state_dim() const {
    return tuples.empty() ? 0 : static_cast<int>(tuples[0].states[0].size());
  }
  int action_dim() const {
    return tuples.empty() ? 0 : static_cast<int>(tuples[0].actions[0].size());
  }
};

// All len(states)-M sliding windows; empty when the trajectory is too short.
std::vector<MultiStepTuple> make_multistep(const Trajectory& traj, int horizon);

// Inverse of make_multistep over a full dataset: stitches tuples back into
// episodes (exact, states are copies). Tuples must cover every step.
std::vector<Trajectory> reconstruct_trajectories(const MultiStepDataset& data);

// All of `online` plus a seeded no-duplicate sample of round(frac*|offline|)
// offline tuples, shuffled. Throws on dimension mismatch.
MultiStepDataset mix(const MultiStepDataset& online,
                     const MultiStepDataset& offline, double offline_frac,
                     std::uint64_t seed);

inline constexpr double kSigmaFloor = 1e-6;

// Streaming observation statistics (Welford). Before any update the stats
// normalize as identity (mean 0, std 1); afterwards the std is floored at
// kSigmaFloor. Partials merge exactly via (count, mean, M2).
class RunningStats {
 public:
  RunningStats() = default;
  explicit RunningStats(int dim)
      : count_(0), mean_(Vec::Zero(dim)), m2_(Vec::Zero(dim)) {}

  void update(const Vec& obs);
  void merge(const RunningStats& other);

  long long count() const { return count_; }
  int dim() const { return static_cast<int>(mean_.size()); }
  const Vec& raw_mean() const { return mean_; }
  const Vec& raw_m2() const { return m2_; }

  Vec mean() const;
  Vec stddev() const;  // population; ones when empty
  Vec normalize(const Vec& obs) const;

  static RunningStats from_raw(long long count, Vec mean, Vec m2);

 private:
  long long count_ = 0;
  Vec mean_;
  Vec m2_;
};

// JSON-lines persistence with a schema header line, plus a flat CSV export.
void save_dataset_jsonl(const std::string& path, const MultiStepDataset& data,
                        const std::string& config_hash = "");
MultiStepDataset load_dataset_jsonl(const std::string& path);
void export_dataset_csv(const std::string& path, const MultiStepDataset& data);

}  // namespace mbpars
