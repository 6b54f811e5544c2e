#pragma once

#include <Eigen/Dense>
#include <span>

namespace mbpars {

// Weights of the shaped load-shedding reward. Defaults keep the soft-penalty
// band continuous at 0.95-d and its jump at 0.95 below 0.05:
// R * exp(-d * tau) = 1000 * exp(-10) ~= 0.045.
struct RewardParams {
  double failure_penalty = 1000.0;  // R
  double c1 = 2.0;                  // voltage-deviation weight
  double c2 = 8.0;                  // shed-amount weight
  double c3 = 3.0;                  // invalid-action weight
  double dead_band = 0.05;          // d, p.u.
  double soft_tau = 200.0;          // tau, 1/p.u.
  double p_eps = 1e-3;              // zero-load threshold
};

// Recovery-schedule voltage deviation, <= 0. The threshold steps through
// 0.7 / 0.8 / 0.9 / 0.95 p.u. as t moves past the fault clearance t_pf.
// Throws unless t > t_pf.
double delta_v(double v, double t, double t_pf);

// Shaped per-step reward evaluated on the post-step state at time t.
double step_reward(const Eigen::VectorXd& voltage,
                   const Eigen::VectorXd& shed_pu, int invalid_count, double t,
                   double t_pf, const RewardParams& params);

// Discounted sum of per-step rewards.
double episode_return(std::span<const double> rewards, double gamma = 1.0);

}  // namespace mbpars
