#include "mbpars/net.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace mbpars {

namespace {

Mat sigmoid(const Mat& z) {
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

void init_matrix(Mat& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.uniform(-bound, bound);
  }
}

void init_vector(Vec& v, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = rng.uniform(-bound, bound);
  }
}

Mat apply_head(OutputHead head, double lo, double hi, const Mat& z) {
  switch (head) {
    case OutputHead::kIdentity:
      return z;
    case OutputHead::kSigmoidAffine:
      return (lo + (hi - lo) * sigmoid(z).array()).matrix();
    case OutputHead::kBoundedSquash: {
      const Mat u = z.array().tanh().matrix();
      return (hi + (lo - hi) * u.array().square()).matrix();
    }
  }
  return z;
}

Mat head_derivative(OutputHead head, double lo, double hi, const Mat& z) {
  switch (head) {
    case OutputHead::kIdentity:
      return Mat::Ones(z.rows(), z.cols());
    case OutputHead::kSigmoidAffine: {
      const Mat s = sigmoid(z);
      return ((hi - lo) * s.array() * (1.0 - s.array())).matrix();
    }
    case OutputHead::kBoundedSquash: {
      const Mat u = z.array().tanh().matrix();
      return ((lo - hi) * 2.0 * u.array() * (1.0 - u.array().square())).matrix();
    }
  }
  return Mat::Ones(z.rows(), z.cols());
}

}  // namespace

long long DenseNet::param_count() const {
  long long n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    n += static_cast<long long>(sizes[l] + 1) * sizes[l + 1];
  }
  return n;
}

DenseNet make_dense(std::vector<int> sizes, OutputHead head, double head_lo,
                    double head_hi, Rng& rng) {
  if (sizes.size() < 2) {
    throw std::invalid_argument("make_dense: need input and output sizes");
  }
  DenseNet net;
  net.sizes = std::move(sizes);
  net.head = head;
  net.head_lo = head_lo;
  net.head_hi = head_hi;
  for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.sizes[l]));
    Mat w(net.sizes[l + 1], net.sizes[l]);
    Vec b(net.sizes[l + 1]);
    init_matrix(w, bound, rng);
    init_vector(b, bound, rng);
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

Mat dense_forward(const DenseNet& net, const Mat& input, DenseCache* cache) {
  if (input.rows() != net.input_dim()) {
    throw std::invalid_argument("dense_forward: input dimension mismatch");
  }
  const std::size_t n_layers = net.weights.size();
  if (cache) {
    cache->inputs.assign(n_layers, Mat());
    cache->preacts.assign(n_layers, Mat());
  }
  Mat x = input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Mat z = (net.weights[l] * x).colwise() + net.biases[l];
    if (cache) {
      cache->inputs[l] = std::move(x);
      cache->preacts[l] = z;
    }
    if (l + 1 < n_layers) {
      x = z.cwiseMax(0.0);
    } else {
      x = apply_head(net.head, net.head_lo, net.head_hi, z);
    }
  }
  return x;
}

DenseGrads zero_grads(const DenseNet& net) {
  DenseGrads g;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    g.weights.push_back(Mat::Zero(net.weights[l].rows(), net.weights[l].cols()));
    g.biases.push_back(Vec::Zero(net.biases[l].size()));
  }
  return g;
}

Mat dense_backward(const DenseNet& net, const DenseCache& cache,
                   const Mat& out_cotangent, DenseGrads* grads) {
  const int last = static_cast<int>(net.weights.size()) - 1;
  Mat dz = out_cotangent.cwiseProduct(
      head_derivative(net.head, net.head_lo, net.head_hi, cache.preacts[last]));
  for (int l = last;; --l) {
    grads->weights[l].noalias() += dz * cache.inputs[l].transpose();
    grads->biases[l] += dz.rowwise().sum();
    Mat dx = net.weights[l].transpose() * dz;
    if (l == 0) return dx;
    dz = dx.cwiseProduct(
        (cache.preacts[l - 1].array() > 0.0).cast<double>().matrix());
  }
}

Vec flatten(const DenseNet& net) {
  Vec flat(net.param_count());
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto& w = net.weights[l];
    std::copy(w.data(), w.data() + w.size(), flat.data() + at);
    at += w.size();
    const auto& b = net.biases[l];
    std::copy(b.data(), b.data() + b.size(), flat.data() + at);
    at += b.size();
  }
  return flat;
}

void unflatten(DenseNet& net, const Vec& flat) {
  if (flat.size() != net.param_count()) {
    throw std::invalid_argument("unflatten: parameter length mismatch");
  }
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    auto& w = net.weights[l];
    std::copy(flat.data() + at, flat.data() + at + w.size(), w.data());
    at += w.size();
    auto& b = net.biases[l];
    std::copy(flat.data() + at, flat.data() + at + b.size(), b.data());
    at += b.size();
  }
}

Vec flatten_grads(const DenseNet& net, const DenseGrads& grads) {
  Vec flat(net.param_count());
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    const auto& w = grads.weights[l];
    std::copy(w.data(), w.data() + w.size(), flat.data() + at);
    at += w.size();
    const auto& b = grads.biases[l];
    std::copy(b.data(), b.data() + b.size(), flat.data() + at);
    at += b.size();
  }
  return flat;
}

// --- LSTM -------------------------------------------------------------------

long long LstmPolicy::param_count() const {
  return 4LL * (hidden_dim * (input_dim + hidden_dim + 1)) +
         static_cast<long long>(output_dim) * (hidden_dim + 1);
}

LstmPolicy make_lstm_policy(int input_dim, int hidden_dim, int output_dim,
                            Rng& rng) {
  LstmPolicy p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.output_dim = output_dim;
  const double bx = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double bh = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (int g = 0; g < 4; ++g) {
    p.wx[g] = Mat(hidden_dim, input_dim);
    init_matrix(p.wx[g], bx, rng);
    p.wh[g] = Mat(hidden_dim, hidden_dim);
    init_matrix(p.wh[g], bh, rng);
    p.b[g] = Vec(hidden_dim);
    init_vector(p.b[g], bh, rng);
  }
  p.w_head = Mat(output_dim, hidden_dim);
  init_matrix(p.w_head, bh, rng);
  p.b_head = Vec(output_dim);
  init_vector(p.b_head, bh, rng);
  return p;
}

LstmState initial_state(const LstmPolicy& policy) {
  return {Vec::Zero(policy.hidden_dim), Vec::Zero(policy.hidden_dim)};
}

Vec policy_step(const LstmPolicy& p, const Vec& obs, LstmState& state) {
  if (obs.size() != p.input_dim) {
    throw std::invalid_argument("policy_step: observation dimension mismatch");
  }
  const Vec zi = p.wx[0] * obs + p.wh[0] * state.h + p.b[0];
  const Vec zf = p.wx[1] * obs + p.wh[1] * state.h + p.b[1];
  const Vec zg = p.wx[2] * obs + p.wh[2] * state.h + p.b[2];
  const Vec zo = p.wx[3] * obs + p.wh[3] * state.h + p.b[3];
  const Vec i = (1.0 / (1.0 + (-zi.array()).exp())).matrix();
  const Vec f = (1.0 / (1.0 + (-zf.array()).exp())).matrix();
  const Vec g = zg.array().tanh().matrix();
  const Vec o = (1.0 / (1.0 + (-zo.array()).exp())).matrix();
  state.c = f.cwiseProduct(state.c) + i.cwiseProduct(g);
  state.h = o.cwiseProduct(state.c.array().tanh().matrix());
  const Vec z_head = p.w_head * state.h + p.b_head;
  const Vec u = z_head.array().tanh().matrix();
  return (p.head_hi + (p.head_lo - p.head_hi) * u.array().square()).matrix();
}

Vec flatten(const LstmPolicy& p) {
  Vec flat(p.param_count());
  Eigen::Index at = 0;
  auto put_mat = [&](const Mat& m) {
    std::copy(m.data(), m.data() + m.size(), flat.data() + at);
    at += m.size();
  };
  auto put_vec = [&](const Vec& v) {
    std::copy(v.data(), v.data() + v.size(), flat.data() + at);
    at += v.size();
  };
  for (int g = 0; g < 4; ++g) put_mat(p.wx[g]);
  for (int g = 0; g < 4; ++g) put_mat(p.wh[g]);
  for (int g = 0; g < 4; ++g) put_vec(p.b[g]);
  put_mat(p.w_head);
  put_vec(p.b_head);
  return flat;
}

void unflatten(LstmPolicy& p, const Vec& flat) {
  if (flat.size() != p.param_count()) {
    throw std::invalid_argument("unflatten: parameter length mismatch");
  }
  Eigen::Index at = 0;
  auto get_mat = [&](Mat& m) {
    std::copy(flat.data() + at, flat.data() + at + m.size(), m.data());
    at += m.size();
  };
  auto get_vec = [&](Vec& v) {
    std::copy(flat.data() + at, flat.data() + at + v.size(), v.data());
    at += v.size();
  };
  for (int g = 0; g < 4; ++g) get_mat(p.wx[g]);
  for (int g = 0; g < 4; ++g) get_mat(p.wh[g]);
  for (int g = 0; g < 4; ++g) get_vec(p.b[g]);
  get_mat(p.w_head);
  get_vec(p.b_head);
}

LstmGrads zero_grads(const LstmPolicy& p) {
  LstmGrads g;
  for (int k = 0; k < 4; ++k) {
    g.wx[k] = Mat::Zero(p.hidden_dim, p.input_dim);
    g.wh[k] = Mat::Zero(p.hidden_dim, p.hidden_dim);
    g.b[k] = Vec::Zero(p.hidden_dim);
  }
  g.w_head = Mat::Zero(p.output_dim, p.hidden_dim);
  g.b_head = Vec::Zero(p.output_dim);
  return g;
}

Vec flatten_grads(const LstmPolicy& p, const LstmGrads& g) {
  LstmPolicy tmp = p;
  for (int k = 0; k < 4; ++k) {
    tmp.wx[k] = g.wx[k];
    tmp.wh[k] = g.wh[k];
    tmp.b[k] = g.b[k];
  }
  tmp.w_head = g.w_head;
  tmp.b_head = g.b_head;
  return flatten(tmp);
}

namespace {

// Per-timestep activations for a batch of sequences run in lockstep.
struct LstmStepCache {
  Mat x, h_prev, c_prev;
  Mat i, f, g, o;
  Mat c, tc;
  Mat u_head;  // tanh of head pre-activation
  Mat y;
};

LstmStepCache lstm_forward_step(const LstmPolicy& p, const Mat& x,
                                const Mat& h_prev, const Mat& c_prev) {
  LstmStepCache s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  s.i = sigmoid(((p.wx[0] * x + p.wh[0] * h_prev).colwise() + p.b[0]));
  s.f = sigmoid(((p.wx[1] * x + p.wh[1] * h_prev).colwise() + p.b[1]));
  s.g = ((p.wx[2] * x + p.wh[2] * h_prev).colwise() + p.b[2]).array().tanh().matrix();
  s.o = sigmoid(((p.wx[3] * x + p.wh[3] * h_prev).colwise() + p.b[3]));
  s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.g);
  s.tc = s.c.array().tanh().matrix();
  const Mat h = s.o.cwiseProduct(s.tc);
  s.u_head = ((p.w_head * h).colwise() + p.b_head).array().tanh().matrix();
  s.y = (p.head_hi + (p.head_lo - p.head_hi) * s.u_head.array().square()).matrix();
  return s;
}

Mat hidden_of(const LstmStepCache& s) { return s.o.cwiseProduct(s.tc); }

}  // namespace

double bc_loss(const LstmPolicy& policy,
               const std::vector<std::vector<Vec>>& obs_seqs,
               const std::vector<std::vector<Vec>>& act_seqs) {
  LstmGrads unused = zero_grads(policy);
  return bc_loss_and_grad(policy, obs_seqs, act_seqs,
                          obs_seqs.empty()
                              ? 1
                              : static_cast<int>(obs_seqs[0].size()),
                          &unused);
}

double bc_loss_and_grad(const LstmPolicy& p,
                        const std::vector<std::vector<Vec>>& obs_seqs,
                        const std::vector<std::vector<Vec>>& act_seqs,
                        int trunc_len, LstmGrads* grads) {
  if (obs_seqs.empty()) throw std::invalid_argument("bc: empty batch");
  if (obs_seqs.size() != act_seqs.size()) {
    throw std::invalid_argument("bc: observation/action batch mismatch");
  }
  const int batch = static_cast<int>(obs_seqs.size());
  const int steps = static_cast<int>(obs_seqs[0].size());
  if (trunc_len < 1) trunc_len = steps;
  for (int s = 0; s < batch; ++s) {
    if (static_cast<int>(obs_seqs[s].size()) != steps ||
        static_cast<int>(act_seqs[s].size()) != steps) {
      throw std::invalid_argument("bc: sequences must have equal length");
    }
  }

  // Lockstep batch matrices per timestep.
  std::vector<LstmStepCache> caches(steps);
  Mat h = Mat::Zero(p.hidden_dim, batch);
  Mat c = Mat::Zero(p.hidden_dim, batch);
  double sse = 0.0;
  const double norm =
      static_cast<double>(batch) * steps * p.output_dim;
  for (int t = 0; t < steps; ++t) {
    Mat x(p.input_dim, batch);
    for (int s = 0; s < batch; ++s) x.col(s) = obs_seqs[s][t];
    caches[t] = lstm_forward_step(p, x, h, c);
    h = hidden_of(caches[t]);
    c = caches[t].c;
    for (int s = 0; s < batch; ++s) {
      sse += (caches[t].y.col(s) - act_seqs[s][t]).squaredNorm();
    }
  }
  const double loss = sse / norm;
  if (!std::isfinite(loss)) {
    throw TrainingDivergence("behavior cloning loss is not finite");
  }

  // BPTT, chunked: gradients do not cross chunk entry boundaries.
  Mat dh = Mat::Zero(p.hidden_dim, batch);
  Mat dc = Mat::Zero(p.hidden_dim, batch);
  for (int t = steps - 1; t >= 0; --t) {
    const LstmStepCache& s = caches[t];
    Mat dy(p.output_dim, batch);
    for (int col = 0; col < batch; ++col) {
      dy.col(col) = 2.0 * (s.y.col(col) - act_seqs[col][t]) / norm;
    }
    const Mat dz_head =
        (dy.array() * ((p.head_lo - p.head_hi) * 2.0 * s.u_head.array() *
                       (1.0 - s.u_head.array().square())))
            .matrix();
    const Mat h_t = hidden_of(s);
    grads->w_head.noalias() += dz_head * h_t.transpose();
    grads->b_head += dz_head.rowwise().sum();
    dh += p.w_head.transpose() * dz_head;

    const Mat do_ = dh.cwiseProduct(s.tc);
    dc += dh.cwiseProduct(s.o).cwiseProduct(
        (1.0 - s.tc.array().square()).matrix());
    const Mat di = dc.cwiseProduct(s.g);
    const Mat df = dc.cwiseProduct(s.c_prev);
    const Mat dg = dc.cwiseProduct(s.i);
    const Mat dc_prev = dc.cwiseProduct(s.f);

    const Mat dzi = (di.array() * s.i.array() * (1.0 - s.i.array())).matrix();
    const Mat dzf = (df.array() * s.f.array() * (1.0 - s.f.array())).matrix();
    const Mat dzg = (dg.array() * (1.0 - s.g.array().square())).matrix();
    const Mat dzo = (do_.array() * s.o.array() * (1.0 - s.o.array())).matrix();

    const std::array<const Mat*, 4> dz = {&dzi, &dzf, &dzg, &dzo};
    Mat dh_prev = Mat::Zero(p.hidden_dim, batch);
    for (int k = 0; k < 4; ++k) {
      grads->wx[k].noalias() += (*dz[k]) * s.x.transpose();
      grads->wh[k].noalias() += (*dz[k]) * s.h_prev.transpose();
      grads->b[k] += dz[k]->rowwise().sum();
      dh_prev.noalias() += p.wh[k].transpose() * (*dz[k]);
    }

    if (t % trunc_len == 0) {
      // Chunk entry: stop the gradient flow into earlier steps.
      dh.setZero();
      dc.setZero();
    } else {
      dh = dh_prev;
      dc = dc_prev;
    }
  }
  return loss;
}

// --- Optimizer / supervised training -----------------------------------------

Optimizer::Optimizer(const std::string& kind, double lr, Eigen::Index dim)
    : lr_(lr) {
  if (kind == "adam") {
    adaptive_ = true;
    m_ = Vec::Zero(dim);
    v_ = Vec::Zero(dim);
  } else if (kind != "sgd") {
    throw std::invalid_argument("optimizer: unknown kind '" + kind + "'");
  }
}

void Optimizer::step(Vec& params, const Vec& grad) {
  if (!adaptive_) {
    params -= lr_ * grad;
    return;
  }
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  ++t_;
  m_ = beta1 * m_ + (1.0 - beta1) * grad;
  v_ = (beta2 * v_.array() + (1.0 - beta2) * grad.array().square()).matrix();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  params.array() -=
      lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps);
}

TrainReport train_supervised(DenseNet& net, const Mat& inputs,
                             const Mat& targets, const TrainOptions& options,
                             std::uint64_t seed) {
  if (inputs.cols() == 0) {
    throw std::invalid_argument("train_supervised: empty dataset");
  }
  const auto start = std::chrono::steady_clock::now();
  Rng rng(derive_seed(seed, 0x747261696eULL));
  std::vector<int> order(inputs.cols());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const int n_val =
      std::min<int>(static_cast<int>(options.val_frac * order.size()),
                    static_cast<int>(order.size()) - 1);
  std::vector<int> val_idx(order.end() - n_val, order.end());
  order.resize(order.size() - n_val);

  auto batch_loss = [&](const std::vector<int>& idx, DenseGrads* grads) {
    Mat x(inputs.rows(), idx.size());
    Mat y(targets.rows(), idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      x.col(k) = inputs.col(idx[k]);
      y.col(k) = targets.col(idx[k]);
    }
    DenseCache cache;
    const Mat pred = dense_forward(net, x, grads ? &cache : nullptr);
    const double loss =
        (pred - y).squaredNorm() / static_cast<double>(idx.size());
    if (grads) {
      const Mat dy = 2.0 * (pred - y) / static_cast<double>(idx.size());
      dense_backward(net, cache, dy, grads);
    }
    return loss;
  };

  TrainReport report;
  Vec theta = flatten(net);
  Optimizer opt(options.optimizer, options.lr, theta.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double running = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size();
         at += options.batch_size) {
      std::vector<int> idx(
          order.begin() + at,
          order.begin() +
              std::min(order.size(), at + options.batch_size));
      DenseGrads grads = zero_grads(net);
      const double loss = batch_loss(idx, &grads);
      if (!std::isfinite(loss)) {
        throw TrainingDivergence("training loss is not finite");
      }
      opt.step(theta, flatten_grads(net, grads));
      unflatten(net, theta);
      running += loss;
      ++batches;
    }
    report.train_loss.push_back(running / std::max(batches, 1));
    report.val_loss.push_back(val_idx.empty() ? report.train_loss.back()
                                              : batch_loss(val_idx, nullptr));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

}  // namespace mbpars
