#pragma once

#include <string>

#include "mbpars/dataset.hpp"
#include "mbpars/net.hpp"
#include "mbpars/surrogate.hpp"

namespace mbpars {

// Portable JSON checkpoints: layout descriptor + flat parameter vector +
// format version, plus training metadata used by the harness (wall-clock
// offsets for fair timing comparisons).

struct SurrogateCheckpoint {
  SurrogateModel model;
  double train_wall_seconds = 0.0;
  double val_loss = 0.0;
  std::string config_hash;
};

void save_surrogate(const std::string& path, const SurrogateCheckpoint& ckpt);
SurrogateCheckpoint load_surrogate(const std::string& path);

struct PolicyCheckpoint {
  LstmPolicy policy;
  RunningStats stats;  // observation normalization attached to the weights
  double train_wall_seconds = 0.0;
  std::string config_hash;
};

void save_policy(const std::string& path, const PolicyCheckpoint& ckpt);
PolicyCheckpoint load_policy(const std::string& path);

}  // namespace mbpars
