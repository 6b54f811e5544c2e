#pragma once

#include <cstdint>
#include <vector>

#include "mbpars/dataset.hpp"
#include "mbpars/grid.hpp"
#include "mbpars/net.hpp"

namespace mbpars {

// Rule-based under-voltage load shedding: a controlled bus sheds by
// `shed_step` once its voltage has stayed below `trigger_v` for `dwell_s`.
struct UvlsRule {
  double trigger_v = 0.90;
  double dwell_s = 0.33;
  double shed_step = -0.05;
};

class UvlsController {
 public:
  UvlsController(UvlsRule rule, std::vector<int> controlled, int n_buses);

  void reset();
  // Reads the controlled-bus voltages out of the flat observation.
  Vec action(const Vec& observation);

 private:
  UvlsRule rule_;
  std::vector<int> controlled_;
  int n_buses_;
  std::vector<double> below_seconds_;
};

// Noisy-UVLS rollouts on the ground-truth simulator for every task,
// converted to M-step tuples and tagged offline. Episode seeds derive from
// (seed, task index, episode index), so generation order does not matter.
MultiStepDataset generate_offline(const GridModel& grid,
                                  const std::vector<Task>& tasks,
                                  int episodes_per_task, double noise_std,
                                  int horizon, std::uint64_t seed,
                                  const UvlsRule& rule = {});

struct ImitationOptions {
  int epochs = 40;
  int batch_episodes = 8;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double val_frac = 0.1;
  int tbptt_len = 20;
};

// Behavior cloning of the recorded actions onto the recurrent policy,
// unrolled in episode order over raw (unnormalized) observations.
TrainReport imitate(LstmPolicy& policy, const MultiStepDataset& offline,
                    const ImitationOptions& options, std::uint64_t seed);

}  // namespace mbpars
