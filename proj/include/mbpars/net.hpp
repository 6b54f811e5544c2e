#pragma once

#include <Eigen/Dense>
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "mbpars/grid.hpp"
#include "mbpars/rng.hpp"

namespace mbpars {

// Output layer of a dense net.
//  kIdentity:      y = z
//  kSigmoidAffine: y = lo + (hi-lo) * sigmoid(z), strictly inside (lo, hi)
//  kBoundedSquash: y = hi + (lo-hi) * tanh(z)^2; centered so z = 0 maps to hi
//                  (the no-action end for a [-0.2, 0] shedding head) and the
//                  output never leaves [lo, hi] for any parameters.
enum class OutputHead { kIdentity, kSigmoidAffine, kBoundedSquash };

struct DenseNet {
  std::vector<int> sizes;
  std::vector<Mat> weights;  // weights[l]: sizes[l+1] x sizes[l]
  std::vector<Vec> biases;
  OutputHead head = OutputHead::kIdentity;
  double head_lo = -1.0;
  double head_hi = 1.0;

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  long long param_count() const;
};

DenseNet make_dense(std::vector<int> sizes, OutputHead head, double head_lo,
                    double head_hi, Rng& rng);

struct DenseCache {
  std::vector<Mat> inputs;  // inputs[l]: activation fed to layer l
  std::vector<Mat> preacts; // preacts[l]: z of layer l
};

// Hidden activation is ReLU. Columns of `input` are batch samples.
Mat dense_forward(const DenseNet& net, const Mat& input,
                  DenseCache* cache = nullptr);

struct DenseGrads {
  std::vector<Mat> weights;
  std::vector<Vec> biases;
};

DenseGrads zero_grads(const DenseNet& net);

// Reverse pass; accumulates parameter gradients and returns dL/d(input).
Mat dense_backward(const DenseNet& net, const DenseCache& cache,
                   const Mat& out_cotangent, DenseGrads* grads);

// Flat parameter views. Layout per layer: column-major weights then bias.
Vec flatten(const DenseNet& net);
void unflatten(DenseNet& net, const Vec& flat);
Vec flatten_grads(const DenseNet& net, const DenseGrads& grads);

// --- Recurrent policy -------------------------------------------------------

// Single gated recurrent (LSTM) cell plus a bounded-squash dense head.
struct LstmPolicy {
  int input_dim = 0;
  int hidden_dim = 0;
  int output_dim = 0;
  // Gate order everywhere: input, forget, candidate, output.
  std::array<Mat, 4> wx;
  std::array<Mat, 4> wh;
  std::array<Vec, 4> b;
  Mat w_head;
  Vec b_head;
  double head_lo = kActionLo;
  double head_hi = kActionHi;

  long long param_count() const;
};

LstmPolicy make_lstm_policy(int input_dim, int hidden_dim, int output_dim,
                            Rng& rng);

struct LstmState {
  Vec h;
  Vec c;
};

LstmState initial_state(const LstmPolicy& policy);

// One control step; updates the recurrent state in place.
Vec policy_step(const LstmPolicy& policy, const Vec& obs, LstmState& state);

Vec flatten(const LstmPolicy& policy);
void unflatten(LstmPolicy& policy, const Vec& flat);

struct LstmGrads {
  std::array<Mat, 4> wx;
  std::array<Mat, 4> wh;
  std::array<Vec, 4> b;
  Mat w_head;
  Vec b_head;
};

LstmGrads zero_grads(const LstmPolicy& policy);
Vec flatten_grads(const LstmPolicy& policy, const LstmGrads& grads);

// Behavior-cloning MSE over equal-length sequences, averaged over
// (sequence, step, component). Gradient by backprop through time; gradients
// stop at chunk boundaries of `trunc_len` steps (pass the sequence length or
// more for exact BPTT). Hidden state still flows forward across chunks.
double bc_loss(const LstmPolicy& policy,
               const std::vector<std::vector<Vec>>& obs_seqs,
               const std::vector<std::vector<Vec>>& act_seqs);
double bc_loss_and_grad(const LstmPolicy& policy,
                        const std::vector<std::vector<Vec>>& obs_seqs,
                        const std::vector<std::vector<Vec>>& act_seqs,
                        int trunc_len, LstmGrads* grads);

// --- Training ---------------------------------------------------------------

class TrainingDivergence : public std::runtime_error {
 public:
  explicit TrainingDivergence(const std::string& what)
      : std::runtime_error(what) {}
};

// Plain mini-batch gradient descent, with an adaptive-moment variant behind
// the same interface.
class Optimizer {
 public:
  Optimizer(const std::string& kind, double lr, Eigen::Index dim);
  void step(Vec& params, const Vec& grad);
  double lr() const { return lr_; }

 private:
  bool adaptive_ = false;
  double lr_ = 1e-3;
  long long t_ = 0;
  Vec m_;
  Vec v_;
};

struct TrainOptions {
  int epochs = 100;
  int batch_size = 256;
  double lr = 1e-3;
  std::string optimizer = "sgd";
  double val_frac = 0.1;
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  double wall_seconds = 0.0;

  double final_val_loss() const {
    return val_loss.empty() ? 0.0 : val_loss.back();
  }
};

// Supervised regression on (inputs, targets) columns with squared-L2 loss
// normalized by sample count. Seeded shuffling and validation split.
TrainReport train_supervised(DenseNet& net, const Mat& inputs,
                             const Mat& targets, const TrainOptions& options,
                             std::uint64_t seed);

}  // namespace mbpars
