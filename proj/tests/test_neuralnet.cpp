#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mbpars/net.hpp"
#include "mbpars/rng.hpp"

using namespace mbpars;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central finite differences of `loss` over every parameter coordinate.
template <typename Net, typename LossFn>
double max_grad_rel_err(Net& net, const Vec& analytic, const LossFn& loss,
                        double h = 1e-5) {
  Vec theta = flatten(net);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Vec tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    unflatten(net, tp);
    const double lp = loss();
    unflatten(net, tm);
    const double lm = loss();
    worst = std::max(worst, rel_err((lp - lm) / (2.0 * h), analytic[i]));
  }
  unflatten(net, theta);
  return worst;
}

}  // namespace

TEST_CASE("forward: hand-checked linear layer") {
  Rng rng(1);
  DenseNet net = make_dense({1, 1}, OutputHead::kIdentity, 0, 0, rng);
  net.weights[0](0, 0) = 2.0;
  net.biases[0][0] = 1.0;
  const Mat y = dense_forward(net, Mat::Constant(1, 1, 3.0));
  CHECK(y(0, 0) == 7.0);
}

TEST_CASE("forward: zero weights give zero output") {
  Rng rng(2);
  DenseNet net = make_dense({4, 8, 3}, OutputHead::kIdentity, 0, 0, rng);
  unflatten(net, Vec::Zero(net.param_count()));
  Mat x(4, 5);
  x.setRandom();
  CHECK(dense_forward(net, x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bounded-squash head stays inside its interval") {
  Rng rng(3);
  DenseNet net = make_dense({3, 6, 2}, OutputHead::kBoundedSquash, -0.2, 0.0,
                            rng);
  for (int trial = 0; trial < 300; ++trial) {
    Vec theta(net.param_count());
    const double scale = std::pow(10.0, rng.uniform(-2.0, 4.0));
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      theta[i] = rng.normal(0.0, scale);
    }
    unflatten(net, theta);
    Vec x(3);
    for (int i = 0; i < 3; ++i) x[i] = rng.normal(0.0, 100.0);
    const Mat y = dense_forward(net, x);
    CHECK(y.minCoeff() >= -0.2);
    CHECK(y.maxCoeff() <= 0.0);
  }
}

TEST_CASE("bounded-squash head is centered on the no-action end") {
  Rng rng(4);
  DenseNet net = make_dense({3, 2}, OutputHead::kBoundedSquash, -0.2, 0.0, rng);
  unflatten(net, Vec::Zero(net.param_count()));
  const Mat y = dense_forward(net, Vec::Zero(3));
  CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sigmoid-affine head spans its signed range") {
  Rng rng(5);
  DenseNet net = make_dense({2, 1}, OutputHead::kSigmoidAffine, -0.3, 0.3, rng);
  unflatten(net, Vec::Zero(net.param_count()));
  CHECK(dense_forward(net, Vec::Zero(2))(0, 0) == doctest::Approx(0.0));
  net.weights[0](0, 0) = 100.0;
  Vec hi(2);
  hi << 10.0, 0.0;
  CHECK(dense_forward(net, hi)(0, 0) == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(dense_forward(net, -hi)(0, 0) == doctest::Approx(-0.3).epsilon(1e-9));
}

TEST_CASE("flat parameter round trip") {
  Rng rng(6);
  DenseNet net = make_dense({2, 3, 1}, OutputHead::kIdentity, 0, 0, rng);
  CHECK(net.param_count() == 13);  // 2*3+3 + 3*1+1
  const Vec theta = flatten(net);
  DenseNet copy = net;
  unflatten(copy, theta);
  CHECK(flatten(copy) == theta);
  CHECK_THROWS_AS(unflatten(copy, Vec::Zero(12)), std::invalid_argument);

  LstmPolicy p = make_lstm_policy(13, 32, 3, rng);
  CHECK(p.param_count() == 4 * (32 * (13 + 32 + 1)) + 3 * 33);
  const Vec phi = flatten(p);
  LstmPolicy q = make_lstm_policy(13, 32, 3, rng);
  unflatten(q, phi);
  CHECK(flatten(q) == phi);
  CHECK_THROWS_AS(unflatten(q, Vec::Zero(10)), std::invalid_argument);
}

TEST_CASE("dense gradient matches finite differences everywhere") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    DenseNet net = make_dense({3, 5, 2},
                              trial % 2 == 0 ? OutputHead::kIdentity
                                             : OutputHead::kSigmoidAffine,
                              -0.5, 0.5, rng);
    Mat x(3, 4);
    Mat y(2, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      y.data()[i] = rng.normal(0.0, 0.3);
    }
    auto loss = [&]() {
      return (dense_forward(net, x) - y).squaredNorm() / x.cols();
    };
    DenseCache cache;
    const Mat pred = dense_forward(net, x, &cache);
    DenseGrads grads = zero_grads(net);
    dense_backward(net, cache, 2.0 * (pred - y) / x.cols(), &grads);
    CHECK(max_grad_rel_err(net, flatten_grads(net, grads), loss) < 1e-4);
  }
}

TEST_CASE("zero residual gives zero gradient") {
  Rng rng(8);
  DenseNet net = make_dense({3, 4, 2}, OutputHead::kIdentity, 0, 0, rng);
  Mat x(3, 6);
  x.setRandom();
  DenseCache cache;
  const Mat pred = dense_forward(net, x, &cache);
  DenseGrads grads = zero_grads(net);
  dense_backward(net, cache, Mat::Zero(2, 6), &grads);
  CHECK(flatten_grads(net, grads).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lstm gradient matches finite differences everywhere") {
  Rng rng(9);
  LstmPolicy policy = make_lstm_policy(3, 4, 2, rng);
  const int steps = 12;
  std::vector<Vec> obs, act;
  for (int t = 0; t < steps; ++t) {
    Vec o(3);
    for (int i = 0; i < 3; ++i) o[i] = rng.normal();
    obs.push_back(o);
    Vec a(2);
    for (int i = 0; i < 2; ++i) a[i] = rng.uniform(-0.2, 0.0);
    act.push_back(a);
  }
  const std::vector<std::vector<Vec>> obs_b = {obs};
  const std::vector<std::vector<Vec>> act_b = {act};

  LstmGrads grads = zero_grads(policy);
  bc_loss_and_grad(policy, obs_b, act_b, steps, &grads);
  auto loss = [&]() { return bc_loss(policy, obs_b, act_b); };
  CHECK(max_grad_rel_err(policy, flatten_grads(policy, grads), loss) < 1e-4);
}

TEST_CASE("tbptt truncation changes the gradient but not the loss") {
  Rng rng(10);
  LstmPolicy policy = make_lstm_policy(2, 3, 1, rng);
  std::vector<Vec> obs, act;
  for (int t = 0; t < 20; ++t) {
    Vec o(2);
    o << rng.normal(), rng.normal();
    obs.push_back(o);
    act.push_back(Vec::Constant(1, -0.1));
  }
  LstmGrads full = zero_grads(policy);
  const double l_full = bc_loss_and_grad(policy, {obs}, {act}, 20, &full);
  LstmGrads trunc = zero_grads(policy);
  const double l_trunc = bc_loss_and_grad(policy, {obs}, {act}, 5, &trunc);
  CHECK(l_full == l_trunc);
  CHECK((flatten_grads(policy, full) - flatten_grads(policy, trunc))
            .cwiseAbs()
            .maxCoeff() > 0.0);
}

TEST_CASE("supervised training solves y = 2x") {
  Rng rng(11);
  DenseNet net = make_dense({1, 1}, OutputHead::kIdentity, 0, 0, rng);
  Mat x(1, 256);
  for (int i = 0; i < 256; ++i) x(0, i) = rng.uniform(-1.0, 1.0);
  const Mat y = 2.0 * x;
  TrainOptions options;
  options.epochs = 200;
  options.batch_size = 32;
  options.lr = 0.05;
  options.optimizer = "sgd";
  const TrainReport report = train_supervised(net, x, y, options, 1);
  CHECK(report.final_val_loss() < 1e-6);
  CHECK(report.train_loss.size() == 200);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Rng rng(12);
  DenseNet net = make_dense({2, 4, 1}, OutputHead::kIdentity, 0, 0, rng);
  const Vec before = flatten(net);
  Mat x(2, 32);
  x.setRandom();
  Mat y(1, 32);
  y.setRandom();
  TrainOptions options;
  options.epochs = 3;
  options.lr = 0.0;
  options.optimizer = "sgd";
  train_supervised(net, x, y, options, 1);
  CHECK(flatten(net) == before);
}

TEST_CASE("zero epochs leave parameters unchanged") {
  Rng rng(13);
  DenseNet net = make_dense({2, 4, 1}, OutputHead::kIdentity, 0, 0, rng);
  const Vec before = flatten(net);
  Mat x(2, 8);
  x.setRandom();
  Mat y(1, 8);
  y.setRandom();
  TrainOptions options;
  options.epochs = 0;
  train_supervised(net, x, y, options, 1);
  CHECK(flatten(net) == before);
}

TEST_CASE("divergence aborts with a diagnostic") {
  Rng rng(14);
  DenseNet net = make_dense({1, 8, 1}, OutputHead::kIdentity, 0, 0, rng);
  Mat x(1, 64);
  Mat y(1, 64);
  for (int i = 0; i < 64; ++i) {
    x(0, i) = rng.uniform(-100.0, 100.0);
    y(0, i) = rng.uniform(-100.0, 100.0);
  }
  TrainOptions options;
  options.epochs = 200;
  options.lr = 1e6;  // guaranteed blow-up
  options.optimizer = "sgd";
  CHECK_THROWS_AS(train_supervised(net, x, y, options, 1),
                  TrainingDivergence);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    DenseNet net = make_dense({2, 6, 1}, OutputHead::kIdentity, 0, 0, rng);
    Rng data_rng(55);
    Mat x(2, 64);
    Mat y(1, 64);
    for (int i = 0; i < 64; ++i) {
      x(0, i) = data_rng.normal();
      x(1, i) = data_rng.normal();
      y(0, i) = x(0, i) - 0.5 * x(1, i);
    }
    TrainOptions options;
    options.epochs = 20;
    options.lr = 1e-2;
    options.optimizer = "adam";
    train_supervised(net, x, y, options, 42);
    return flatten(net);
  };
  CHECK(run(21) == run(21));
}

TEST_CASE("policy step matches the batched forward pass") {
  Rng rng(15);
  LstmPolicy policy = make_lstm_policy(4, 5, 2, rng);
  std::vector<Vec> obs;
  for (int t = 0; t < 7; ++t) {
    Vec o(4);
    for (int i = 0; i < 4; ++i) o[i] = rng.normal();
    obs.push_back(o);
  }
  // Sequential stepping.
  LstmState st = initial_state(policy);
  std::vector<Vec> stepwise;
  for (const Vec& o : obs) stepwise.push_back(policy_step(policy, o, st));
  // The batched path is exercised through the loss: a zero-target MSE equals
  // the mean squared action, which we can reproduce from the stepwise pass.
  std::vector<Vec> zeros(obs.size(), Vec::Zero(2));
  const double loss = bc_loss(policy, {obs}, {zeros});
  double expect = 0.0;
  for (const Vec& a : stepwise) expect += a.squaredNorm();
  expect /= 7.0 * 2.0;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  for (const Vec& a : stepwise) {
    CHECK(a.minCoeff() >= -0.2);
    CHECK(a.maxCoeff() <= 0.0);
  }
}
