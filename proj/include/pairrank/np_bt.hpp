#pragma once

// Nonparametric Bradley-Terry score: the average, over all chains of
// pairings that end at a model, of the summed log odds along the chain.
// Unlike the parametric fit it stays meaningful when preferences are
// non-transitive, and when the win matrix comes from a logistic model it
// reproduces the coefficient differences exactly.
//
// With l(i,j) the log odds that j beats i (antisymmetric, l(k,k) = 0),
// edges not touching the target cancel across chain reversals and the
// average collapses to the closed form implemented here:
//   s_m = (1/(M-1)) * sum_{m' != m} [ l(m', m) + l(0, m') ].

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pairrank/core.hpp"
#include "pairrank/math.hpp"
#include "pairrank/win_matrix.hpp"

namespace pairrank {

struct NpBtOptions {
  double clamp = 1e-9;  // probabilities pulled into [clamp, 1-clamp]
  // Use the raw odds (not its log) for the anchor-edge term. Off by
  // default: only the log form recovers Bradley-Terry coefficients.
  bool odds_anchor_term = false;
};

// Win probabilities for every canonical pair (value = probability the
// second, higher-index model wins). Flipped and diagonal lookups follow the
// theta' convention: theta'(j,i) = 1 - theta(i,j), theta'(k,k) = 1/2.
class FullWinMatrix {
 public:
  FullWinMatrix(int num_models, std::vector<double> theta)
      : num_models_(num_models), theta_(std::move(theta)) {
    if (static_cast<int>(theta_.size()) != pair_count(num_models_)) {
      throw ValidationError("win matrix size does not match model count");
    }
    for (double v : theta_) {
      if (std::isnan(v)) throw ValidationError("win matrix contains NaN");
    }
  }

  static FullWinMatrix from_coefficients(const std::vector<double>& xi) {
    const int m = static_cast<int>(xi.size());
    std::vector<double> theta;
    theta.reserve(pair_count(m));
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) theta.push_back(sigmoid(xi[j] - xi[i]));
    }
    return FullWinMatrix(m, std::move(theta));
  }

  // Empirical matrix from IPW estimates; never-sampled pairs fall back to
  // 1/2 and are counted so callers can warn about partial coverage.
  static FullWinMatrix from_estimate(const WinMatrixEstimate& est,
                                     int* unobserved_pairs = nullptr) {
    std::vector<double> theta(est.theta_hat.size());
    int missing = 0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (est.n_obs[i] > 0) {
        theta[i] = est.theta_hat[i];
      } else {
        theta[i] = 0.5;
        ++missing;
      }
    }
    if (unobserved_pairs) *unobserved_pairs = missing;
    return FullWinMatrix(est.num_models, std::move(theta));
  }

  int num_models() const { return num_models_; }
  const std::vector<double>& values() const { return theta_; }

  double at(int flat) const { return theta_[flat]; }

  // theta'((i,j)) for any ordered (i,j).
  double oriented(int i, int j) const {
    if (i == j) return 0.5;
    if (i < j) return theta_[pair_flat_index({i, j}, num_models_)];
    return 1.0 - theta_[pair_flat_index({j, i}, num_models_)];
  }

 private:
  int num_models_;
  std::vector<double> theta_;  // canonical pairs, flat order
};

struct NpBtScore {
  std::vector<double> s;
  int clamped_entries = 0;  // probabilities at 0/1 pulled inside (0,1)
};

namespace detail {

inline double clamp_prob(double v, double clamp, int* clamped) {
  if (v < clamp) {
    ++*clamped;
    return clamp;
  }
  if (v > 1.0 - clamp) {
    ++*clamped;
    return 1.0 - clamp;
  }
  return v;
}

}  // namespace detail

inline NpBtScore np_bt_score(const FullWinMatrix& w,
                             const NpBtOptions& opts = {}) {
  const int m_count = w.num_models();
  NpBtScore out;
  out.s.assign(m_count, 0.0);
  if (m_count < 2) return out;

  // log odds of each canonical pair, clamped away from 0/1
  const int n_pairs = pair_count(m_count);
  std::vector<double> logodds(n_pairs);
  std::vector<double> prob(n_pairs);
  for (int flat = 0; flat < n_pairs; ++flat) {
    const double p = detail::clamp_prob(w.at(flat), opts.clamp,
                                        &out.clamped_entries);
    prob[flat] = p;
    logodds[flat] = std::log(p) - std::log1p(-p);
  }

  const auto oriented_logodds = [&](int i, int j) {
    if (i == j) return 0.0;
    const bool flip = i > j;
    const int flat = flip ? pair_flat_index({j, i}, m_count)
                          : pair_flat_index({i, j}, m_count);
    return flip ? -logodds[flat] : logodds[flat];
  };
  const auto anchor_term = [&](int mp) {
    if (!opts.odds_anchor_term) return oriented_logodds(0, mp);
    if (mp == 0) return 1.0;  // odds of the conventional 1/2
    const double p = prob[pair_flat_index({0, mp}, m_count)];
    return p / (1.0 - p);
  };

  const double norm = 1.0 / static_cast<double>(m_count - 1);
  for (int m = 0; m < m_count; ++m) {
    double acc = 0.0;
    for (int mp = 0; mp < m_count; ++mp) {
      if (mp == m) continue;
      acc += oriented_logodds(mp, m) + anchor_term(mp);
    }
    out.s[m] = acc * norm;
  }
  return out;
}

// Gradient of np_bt_score: rows are models, columns canonical pairs in flat
// order. For the log form,
//   d s_m / d theta(a) = (1{a2=m} - 1{a1=m} + 1{a1=0, a2!=m})
//                        / ((M-1) theta(a)(1-theta(a))).
inline std::vector<std::vector<double>> np_bt_gradient(
    const FullWinMatrix& w, const NpBtOptions& opts = {}) {
  const int m_count = w.num_models();
  const int n_pairs = pair_count(m_count);
  std::vector<std::vector<double>> grad(m_count,
                                        std::vector<double>(n_pairs, 0.0));
  if (m_count < 2) return grad;
  int clamped = 0;
  const double norm = 1.0 / static_cast<double>(m_count - 1);
  int flat = 0;
  for (int i = 0; i < m_count; ++i) {
    for (int j = i + 1; j < m_count; ++j, ++flat) {
      const double p = detail::clamp_prob(w.at(flat), opts.clamp, &clamped);
      const double d_log = 1.0 / (p * (1.0 - p));
      const double d_anchor =
          opts.odds_anchor_term ? 1.0 / ((1.0 - p) * (1.0 - p)) : d_log;
      for (int m = 0; m < m_count; ++m) {
        double coeff = 0.0;
        if (j == m) coeff += d_log;
        if (i == m) coeff -= d_log;
        if (i == 0 && j != m) coeff += d_anchor;
        grad[m][flat] = coeff * norm;
      }
    }
  }
  return grad;
}

// Delta-method variance of each score given the IPW per-pair variance of
// the win-matrix estimate (approximate; treats entries as independent).
inline std::vector<double> np_bt_delta_variance(
    const FullWinMatrix& w, const WinMatrixEstimate& est,
    const NpBtOptions& opts = {}) {
  const auto grad = np_bt_gradient(w, opts);
  std::vector<double> var(grad.size(), 0.0);
  const double t = static_cast<double>(est.total);
  for (std::size_t m = 0; m < grad.size(); ++m) {
    for (std::size_t flat = 0; flat < grad[m].size(); ++flat) {
      if (est.n_obs[flat] == 0) continue;
      const double g = grad[m][flat];
      var[m] += g * g * est.sigma_hat[flat] / t;
    }
  }
  return var;
}

}  // namespace pairrank
