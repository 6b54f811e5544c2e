#include "mbpars/reward.hpp"

#include <cmath>
#include <stdexcept>

namespace mbpars {

namespace {
// Nudges window comparisons so control times landing on a boundary within
// float error resolve to the later (stricter) regime.
constexpr double kTimeEps = 1e-9;
}  // namespace

double delta_v(double v, double t, double t_pf) {
  const double dt = t - t_pf;
  if (dt <= 0.0) {
    throw std::invalid_argument("delta_v: t must be past fault clearance");
  }
  double threshold = 0.95;
  if (dt < 0.33 - kTimeEps) {
    threshold = 0.70;
  } else if (dt < 0.5 - kTimeEps) {
    threshold = 0.80;
  } else if (dt < 1.5 - kTimeEps) {
    threshold = 0.90;
  }
  return std::min(v - threshold, 0.0);
}

double step_reward(const Eigen::VectorXd& voltage,
                   const Eigen::VectorXd& shed_pu, int invalid_count, double t,
                   double t_pf, const RewardParams& params) {
  const double min_v = voltage.minCoeff();
  const double recovery_floor = 0.95 - params.dead_band;

  if (t > t_pf + 4.0 + kTimeEps) {
    if (min_v < recovery_floor) {
      return -params.failure_penalty;
    }
    if (min_v < 0.95) {
      return -params.failure_penalty *
             std::exp(-(min_v - recovery_floor) * params.soft_tau);
    }
  }

  double deviation = 0.0;
  if (t > t_pf + kTimeEps) {
    for (Eigen::Index i = 0; i < voltage.size(); ++i) {
      deviation += delta_v(voltage[i], t, t_pf);
    }
  }
  return params.c1 * deviation - params.c2 * shed_pu.sum() -
         params.c3 * invalid_count;
}

double episode_return(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double scale = 1.0;
  for (double r : rewards) {
    total += scale * r;
    scale *= gamma;
  }
  return total;
}

}  // namespace mbpars
