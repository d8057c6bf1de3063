#pragma once

// Inverse-probability-weighted estimation of the win matrix
//   theta*(a) = E[H_t | A_t = a]
// from a battle log, with the per-pair variance of the reweighted
// observations X_t(a) = H_t 1{A_t=a} / P_t(a) and CLT intervals
//   theta_hat(a) +- z_{1-alpha/2} sqrt(sigma_hat(a) / T).
//
// Accumulation uses per-pair sums of X and X^2 so that sharded merges are
// order-independent and a streaming pass reproduces the batch result
// exactly.

#include <cmath>
#include <cstdint>
#include <vector>

#include "pairrank/core.hpp"
#include "pairrank/math.hpp"

namespace pairrank {

struct WinMatrixEstimate {
  int num_models = 0;
  std::int64_t total = 0;  // T
  double alpha = 0.05;
  // Indexed by pair_flat_index over all_pairs(num_models).
  std::vector<double> theta_hat;
  std::vector<double> sigma_hat;
  std::vector<std::int64_t> n_obs;
  std::vector<double> lo;
  std::vector<double> hi;

  bool defined(int flat) const { return n_obs[flat] > 0; }
};

// Order-independent sufficient statistics for the IPW estimate.
struct WinMatrixAccumulator {
  int num_models = 0;
  std::int64_t total = 0;
  std::vector<double> sum_x;
  std::vector<double> sum_x2;
  std::vector<std::int64_t> n_obs;

  explicit WinMatrixAccumulator(int models)
      : num_models(models),
        sum_x(pair_count(models), 0.0),
        sum_x2(pair_count(models), 0.0),
        n_obs(pair_count(models), 0) {}

  void add(const BattleRecord& r) {
    if (!(r.sample_prob > 0.0)) {
      throw ValidationError("record with nonpositive sampling probability");
    }
    const int flat = pair_flat_index(r.pair, num_models);
    const double x = r.outcome / r.sample_prob;
    sum_x[flat] += x;
    sum_x2[flat] += x * x;
    n_obs[flat] += 1;
    total += 1;
  }

  void merge(const WinMatrixAccumulator& other) {
    total += other.total;
    for (std::size_t i = 0; i < sum_x.size(); ++i) {
      sum_x[i] += other.sum_x[i];
      sum_x2[i] += other.sum_x2[i];
      n_obs[i] += other.n_obs[i];
    }
  }

  // sigma_hat(a) = (1/T) sum_t (X_t(a) - theta_hat(a))^2 over all T rounds;
  // rounds that served other pairs contribute X=0, which collapses to
  // E[X^2] - theta_hat^2 on the sums.
  WinMatrixEstimate finalize(double alpha) const {
    if (total < 1) {
      throw InsufficientDataError("win matrix requires at least one record");
    }
    WinMatrixEstimate est;
    est.num_models = num_models;
    est.total = total;
    est.alpha = alpha;
    const double t = static_cast<double>(total);
    const double z = normal_quantile(1.0 - alpha / 2.0);
    const std::size_t n_pairs = sum_x.size();
    est.theta_hat.resize(n_pairs);
    est.sigma_hat.resize(n_pairs);
    est.n_obs = n_obs;
    est.lo.resize(n_pairs);
    est.hi.resize(n_pairs);
    for (std::size_t i = 0; i < n_pairs; ++i) {
      const double mean = sum_x[i] / t;
      est.theta_hat[i] = mean;
      est.sigma_hat[i] = std::max(0.0, sum_x2[i] / t - mean * mean);
      if (n_obs[i] > 0) {
        const double half = z * std::sqrt(est.sigma_hat[i] / t);
        est.lo[i] = mean - half;
        est.hi[i] = mean + half;
      } else {
        // Never-sampled pair: vacuous interval over the outcome range.
        est.lo[i] = 0.0;
        est.hi[i] = 1.0;
      }
    }
    return est;
  }
};

inline WinMatrixEstimate estimate_win_matrix(const BattleLog& log,
                                             double alpha = 0.05) {
  if (log.records.empty()) {
    throw InsufficientDataError("win matrix requires a nonempty log");
  }
  WinMatrixAccumulator acc(log.models.size());
  for (const auto& r : log.records) acc.add(r);
  return acc.finalize(alpha);
}

// hi - lo per pair; never-sampled pairs report the vacuous width 1.
inline std::vector<double> interval_width_profile(
    const WinMatrixEstimate& est) {
  std::vector<double> widths(est.theta_hat.size());
  for (std::size_t i = 0; i < widths.size(); ++i) {
    widths[i] = est.n_obs[i] > 0 ? est.hi[i] - est.lo[i] : 1.0;
  }
  return widths;
}

inline double mean_interval_width(const WinMatrixEstimate& est) {
  const auto widths = interval_width_profile(est);
  double sum = 0.0;
  for (double w : widths) sum += w;
  return widths.empty() ? 0.0 : sum / static_cast<double>(widths.size());
}

}  // namespace pairrank
