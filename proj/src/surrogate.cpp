#include "mbpars/surrogate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

namespace mbpars {

SurrogateModel make_surrogate(int n_buses, int n_controlled,
                              const std::vector<int>& hidden, int horizon,
                              double delta_max, std::uint64_t seed) {
  SurrogateModel m;
  m.horizon = horizon;
  m.delta_max = delta_max;
  m.n_buses = n_buses;
  m.n_controlled = n_controlled;
  std::vector<int> sizes;
  sizes.push_back(m.state_dim() + m.action_dim() + 4);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(m.state_dim());
  Rng rng(derive_seed(seed, 0x7375727234ULL));
  m.net = make_dense(sizes, OutputHead::kSigmoidAffine, -delta_max, delta_max,
                     rng);
  return m;
}

Vec predict_delta(const SurrogateModel& model, const Vec& state,
                  const Vec& action, const Eigen::Vector4d& ctx) {
  if (state.size() != model.state_dim() ||
      action.size() != model.action_dim()) {
    throw std::invalid_argument("predict_delta: dimension mismatch");
  }
  Vec input(model.net.input_dim());
  input << state, action, ctx;
  return dense_forward(model.net, input);
}

namespace {

struct TupleBatch {
  std::vector<Mat> states;   // M+1 entries, state_dim x B
  std::vector<Mat> actions;  // M entries
  Mat ctx;                   // 4 x B, first-step context
};

TupleBatch gather(const SurrogateModel& model,
                  std::span<const MultiStepTuple> tuples,
                  std::span<const std::size_t> idx) {
  const int m = model.horizon;
  const int sd = model.state_dim();
  const int ad = model.action_dim();
  const auto batch = static_cast<Eigen::Index>(idx.size());
  TupleBatch tb;
  tb.states.assign(m + 1, Mat(sd, batch));
  tb.actions.assign(m, Mat(ad, batch));
  tb.ctx = Mat(4, batch);
  for (Eigen::Index col = 0; col < batch; ++col) {
    const MultiStepTuple& tup = tuples[idx[col]];
    if (static_cast<int>(tup.states.size()) != m + 1 ||
        static_cast<int>(tup.actions.size()) != m) {
      throw std::invalid_argument("surrogate: tuple horizon mismatch");
    }
    for (int k = 0; k <= m; ++k) tb.states[k].col(col) = tup.states[k];
    for (int k = 0; k < m; ++k) tb.actions[k].col(col) = tup.actions[k];
    tb.ctx.col(col) = tup.context;
  }
  return tb;
}

// Shared forward/backward over one gathered batch. Returns the batch loss;
// accumulates gradients when `grads` is non-null.
double batch_loss(const SurrogateModel& model, const TupleBatch& tb,
                  DenseGrads* grads) {
  const int m = model.horizon;
  const int sd = model.state_dim();
  const int ad = model.action_dim();
  const auto batch = tb.ctx.cols();
  const double norm = static_cast<double>(batch) * m;

  std::vector<DenseCache> caches(grads ? m : 0);
  std::vector<Mat> errors(m);  // s_true[k+1] - s_hat[k+1]
  Mat s_hat = tb.states[0];
  double sse = 0.0;
  for (int k = 0; k < m; ++k) {
    Mat input(sd + ad + 4, batch);
    input.topRows(sd) = s_hat;
    input.middleRows(sd, ad) = tb.actions[k];
    input.bottomRows(4) = tb.ctx;
    input.row(sd + ad + 3).array() += k * model.control_dt;
    const Mat delta =
        dense_forward(model.net, input, grads ? &caches[k] : nullptr);
    s_hat += delta;
    errors[k] = tb.states[k + 1] - s_hat;
    sse += errors[k].squaredNorm();
  }
  const double loss = sse / norm;
  if (!grads) return loss;

  Mat g = Mat::Zero(sd, batch);
  for (int k = m - 1; k >= 0; --k) {
    g -= (2.0 / norm) * errors[k];
    const Mat input_cot = dense_backward(model.net, caches[k], g, grads);
    g += input_cot.topRows(sd);
  }
  return loss;
}

double dataset_loss(const SurrogateModel& model,
                    std::span<const MultiStepTuple> tuples,
                    std::span<const std::size_t> idx, int batch_size) {
  if (idx.empty()) return 0.0;
  double sse = 0.0;
  for (std::size_t at = 0; at < idx.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t n =
        std::min(idx.size() - at, static_cast<std::size_t>(batch_size));
    const TupleBatch tb = gather(model, tuples, idx.subspan(at, n));
    sse += batch_loss(model, tb, nullptr) * static_cast<double>(n);
  }
  return sse / static_cast<double>(idx.size());
}

TrainReport train_loop(SurrogateModel& model,
                       std::span<const MultiStepTuple> tuples, int epochs,
                       const SurrogateTrainOptions& options,
                       std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(derive_seed(seed, 0x737572725fULL));
  std::vector<std::size_t> order(tuples.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto n_val = std::min(
      static_cast<std::size_t>(options.val_frac * order.size()),
      order.size() - 1);
  std::vector<std::size_t> val_idx(order.end() - n_val, order.end());
  order.resize(order.size() - n_val);

  TrainReport report;
  Vec theta = flatten(model.net);
  Optimizer opt(options.optimizer, options.lr, theta.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double running = 0.0;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t n = std::min(
          order.size() - at, static_cast<std::size_t>(options.batch_size));
      const TupleBatch tb =
          gather(model, tuples, std::span(order).subspan(at, n));
      DenseGrads grads = zero_grads(model.net);
      const double loss = batch_loss(model, tb, &grads);
      if (!std::isfinite(loss)) {
        throw TrainingDivergence("surrogate training loss is not finite");
      }
      opt.step(theta, flatten_grads(model.net, grads));
      unflatten(model.net, theta);
      running += loss * static_cast<double>(n);
      seen += n;
    }
    report.train_loss.push_back(running / static_cast<double>(seen));
    report.val_loss.push_back(
        val_idx.empty()
            ? report.train_loss.back()
            : dataset_loss(model, tuples, val_idx, options.batch_size));
    if (!std::isfinite(report.val_loss.back())) {
      throw TrainingDivergence("surrogate validation loss is not finite");
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

}  // namespace

double multistep_loss(const SurrogateModel& model,
                      std::span<const MultiStepTuple> tuples) {
  if (tuples.empty()) return 0.0;
  std::vector<std::size_t> idx(tuples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return dataset_loss(model, tuples, idx, 1024);
}

double multistep_loss_and_grad(const SurrogateModel& model,
                               std::span<const MultiStepTuple> tuples,
                               DenseGrads* grads) {
  if (tuples.empty()) return 0.0;
  std::vector<std::size_t> idx(tuples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const TupleBatch tb = gather(model, tuples, idx);
  return batch_loss(model, tb, grads);
}

TrainReport train_offline(SurrogateModel& model, const MultiStepDataset& data,
                          const SurrogateTrainOptions& options,
                          std::uint64_t seed) {
  if (data.empty()) {
    throw std::invalid_argument("train_offline: empty dataset");
  }
  if (data.horizon != model.horizon) {
    throw std::invalid_argument("train_offline: dataset horizon mismatch");
  }
  return train_loop(model, data.tuples, options.epochs, options, seed);
}

RetrainResult retrain(SurrogateModel& model, const MultiStepDataset& online,
                      const MultiStepDataset& offline,
                      const SurrogateTrainOptions& options,
                      std::uint64_t seed) {
  RetrainResult result;
  if (online.empty()) {
    std::cerr << "warning: retrain skipped, online dataset is empty\n";
    return result;
  }
  const MultiStepDataset combined =
      mix(online, offline, options.offline_mix_frac, seed);

  // Fixed validation slice of the combined set for the guard.
  Rng rng(derive_seed(seed, 0x726772645fULL));
  std::vector<std::size_t> order(combined.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(options.val_frac * order.size()));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());

  result.ran = true;
  result.val_before =
      dataset_loss(model, combined.tuples, val_idx, options.batch_size);

  Vec best_theta = flatten(model.net);
  double best_val = result.val_before;
  Vec theta = best_theta;
  Optimizer opt(options.optimizer, options.lr, theta.size());
  for (int epoch = 0; epoch < options.retrain_epochs; ++epoch) {
    rng.shuffle(train_idx);
    for (std::size_t at = 0; at < train_idx.size();
         at += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t n = std::min(
          train_idx.size() - at, static_cast<std::size_t>(options.batch_size));
      const TupleBatch tb =
          gather(model, combined.tuples, std::span(train_idx).subspan(at, n));
      DenseGrads grads = zero_grads(model.net);
      const double loss = batch_loss(model, tb, &grads);
      if (!std::isfinite(loss)) {
        throw TrainingDivergence("surrogate retrain loss is not finite");
      }
      opt.step(theta, flatten_grads(model.net, grads));
      unflatten(model.net, theta);
    }
    const double val =
        dataset_loss(model, combined.tuples, val_idx, options.batch_size);
    if (val < best_val) {
      best_val = val;
      best_theta = theta;
    }
    if (val > options.guard_factor * result.val_before) {
      result.guard_tripped = true;
      break;
    }
  }
  unflatten(model.net, best_theta);
  result.val_after = best_val;
  return result;
}

HorizonErrorTable horizon_error(const DeltaFn& delta,
                                std::span<const Trajectory> trajectories,
                                std::span<const int> horizons) {
  if (trajectories.empty() || horizons.empty()) return {};
  const int sd = static_cast<int>(trajectories[0].states[0].size());
  const int max_h = *std::max_element(horizons.begin(), horizons.end());

  HorizonErrorTable table;
  table.horizons.assign(horizons.begin(), horizons.end());
  Mat sq_sum = Mat::Zero(static_cast<Eigen::Index>(horizons.size()), sd);
  std::vector<long long> counts(horizons.size(), 0);

  for (const Trajectory& traj : trajectories) {
    const int steps = static_cast<int>(traj.actions.size());
    Vec s_hat = traj.states[0];
    for (int t = 0; t < std::min(steps, max_h); ++t) {
      s_hat += delta(s_hat, traj.actions[t], traj.context[t]);
      const int reached = t + 1;
      for (std::size_t hi = 0; hi < table.horizons.size(); ++hi) {
        if (table.horizons[hi] == reached) {
          const Vec err = s_hat - traj.states[reached];
          sq_sum.row(hi) += err.array().square().matrix().transpose();
          ++counts[hi];
        }
      }
    }
  }

  table.per_dim = Mat::Zero(sq_sum.rows(), sd);
  table.aggregate = Vec::Zero(sq_sum.rows());
  for (Eigen::Index r = 0; r < sq_sum.rows(); ++r) {
    const double n = static_cast<double>(std::max<long long>(counts[r], 1));
    table.per_dim.row(r) = (sq_sum.row(r) / n).array().sqrt().matrix();
    table.aggregate[r] = std::sqrt(sq_sum.row(r).sum() / (n * sd));
  }
  return table;
}

HorizonErrorTable horizon_error(const SurrogateModel& model,
                                std::span<const Trajectory> trajectories,
                                std::span<const int> horizons) {
  return horizon_error(
      [&model](const Vec& s, const Vec& a, const Eigen::Vector4d& ctx) {
        return predict_delta(model, s, a, ctx);
      },
      trajectories, horizons);
}

void write_horizon_error_csv(const std::string& path,
                             const HorizonErrorTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "horizon";
  for (Eigen::Index d = 0; d < table.per_dim.cols(); ++d) {
    out << ",rmse_dim" << d;
  }
  out << ",rmse_all\n";
  out.precision(17);
  for (std::size_t r = 0; r < table.horizons.size(); ++r) {
    out << table.horizons[r];
    for (Eigen::Index d = 0; d < table.per_dim.cols(); ++d) {
      out << "," << table.per_dim(static_cast<Eigen::Index>(r), d);
    }
    out << "," << table.aggregate[static_cast<Eigen::Index>(r)] << "\n";
  }
}

}  // namespace mbpars
