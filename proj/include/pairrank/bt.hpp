#pragma once

// Reweighted Bradley-Terry scores with uncertainty.
//
// The fit minimizes the inverse-probability-weighted soft-label
// cross-entropy
//   F(xi) = sum_t (1/P_t) * xent(H_t, xi[a2] - xi[a1]) + ridge * |xi_free|^2
// over the free coordinates (the anchor coordinate is pinned at 0), by
// damped Newton with step halving. Records are aggregated into per-pair
// sufficient statistics first, so each Newton pass costs O(#pairs) no
// matter how long the log is.
//
// Confidence machinery on top of the fit:
//  - model-misspecification-robust ("sandwich") covariance (1/T) H^-1 G H^-1,
//    with H the average Hessian of the objective and G the average outer
//    product of per-record gradients;
//  - pivot bootstrap intervals from record resamples;
//  - chi-square simultaneous boxes and the approximate ranking they imply.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pairrank/core.hpp"
#include "pairrank/math.hpp"
#include "pairrank/parallel.hpp"
#include "pairrank/rng.hpp"

namespace pairrank {

// Per-pair sufficient statistics of the weighted objective. Linear in the
// records, so resamples and shards aggregate the same way.
struct BtPairData {
  int num_models = 0;
  std::int64_t total = 0;  // T
  // Indexed by pair_flat_index.
  std::vector<double> w_one;    // sum_t w_t h_t
  std::vector<double> w_zero;   // sum_t w_t (1 - h_t)
  std::vector<double> w2;       // sum_t w_t^2
  std::vector<double> w2_h;     // sum_t w_t^2 h_t
  std::vector<double> w2_h2;    // sum_t w_t^2 h_t^2
  std::vector<std::int64_t> n;  // records per pair

  explicit BtPairData(int models)
      : num_models(models),
        w_one(pair_count(models), 0.0),
        w_zero(pair_count(models), 0.0),
        w2(pair_count(models), 0.0),
        w2_h(pair_count(models), 0.0),
        w2_h2(pair_count(models), 0.0),
        n(pair_count(models), 0) {}

  void add(const BattleRecord& r) {
    const double w = 1.0 / r.sample_prob;
    const double h = r.outcome;
    const int flat = pair_flat_index(r.pair, num_models);
    w_one[flat] += w * h;
    w_zero[flat] += w * (1.0 - h);
    w2[flat] += w * w;
    w2_h[flat] += w * w * h;
    w2_h2[flat] += w * w * h * h;
    n[flat] += 1;
    total += 1;
  }

  bool model_active(int m) const {
    for (int other = 0; other < num_models; ++other) {
      if (other == m) continue;
      const PairKey p = other < m ? PairKey{other, m} : PairKey{m, other};
      if (n[pair_flat_index(p, num_models)] > 0) return true;
    }
    return false;
  }
};

inline BtPairData aggregate_battles(const BattleLog& log) {
  BtPairData data(log.models.size());
  for (const auto& r : log.records) data.add(r);
  return data;
}

struct BtOptions {
  double ridge = 1e-6;        // penalty on the free coordinates
  double tolerance = 1e-8;    // gradient max-norm at convergence
  int max_iterations = 500;
  bool warn_on_drop = true;
};

struct BtFit {
  // Length M; anchor coordinate exactly 0; NaN for dropped models.
  std::vector<double> xi;
  int anchor = 0;
  // Free coordinates in ascending model order (all active models except the
  // anchor); this is the coordinate system of every covariance below.
  std::vector<int> free_models;
  std::vector<int> dropped;  // models with no battles
  double grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  double ridge = 0.0;
  std::int64_t total = 0;
  std::vector<std::string> warnings;

  bool includes(int m) const { return !std::isnan(xi[m]); }
};

namespace detail {

struct BtObjective {
  const BtPairData& data;
  const std::vector<int>& coord_of_model;  // -1 anchor/dropped
  double ridge;

  // Evaluates F and optionally accumulates gradient/Hessian in free coords.
  double eval(const std::vector<double>& xi, Eigen::VectorXd* grad,
              Eigen::MatrixXd* hess) const {
    const int m_count = data.num_models;
    double f = 0.0;
    if (grad) grad->setZero();
    if (hess) hess->setZero();
    int flat = 0;
    for (int i = 0; i < m_count; ++i) {
      for (int j = i + 1; j < m_count; ++j, ++flat) {
        if (data.n[flat] == 0) continue;
        const double w1 = data.w_one[flat];
        const double w0 = data.w_zero[flat];
        const double z = xi[j] - xi[i];
        f += w1 * log1pexp(-z) + w0 * log1pexp(z);
        if (!grad && !hess) continue;
        const double s = sigmoid(z);
        const int ci = coord_of_model[i];
        const int cj = coord_of_model[j];
        if (grad) {
          const double dz = s * (w1 + w0) - w1;
          if (cj >= 0) (*grad)(cj) += dz;
          if (ci >= 0) (*grad)(ci) -= dz;
        }
        if (hess) {
          const double d2z = (w1 + w0) * s * (1.0 - s);
          if (cj >= 0) (*hess)(cj, cj) += d2z;
          if (ci >= 0) (*hess)(ci, ci) += d2z;
          if (ci >= 0 && cj >= 0) {
            (*hess)(ci, cj) -= d2z;
            (*hess)(cj, ci) -= d2z;
          }
        }
      }
    }
    for (std::size_t c = 0; c < coord_of_model.size(); ++c) {
      const int coord = coord_of_model[c];
      if (coord < 0) continue;
      const double v = xi[c];
      f += ridge * v * v;
      if (grad) (*grad)(coord) += 2.0 * ridge * v;
      if (hess) (*hess)(coord, coord) += 2.0 * ridge;
    }
    return f;
  }
};

// Smallest connected component of the comparison graph restricted to the
// given models; used to describe singular fits.
inline std::string describe_components(const BtPairData& data,
                                       const std::vector<int>& models) {
  std::vector<int> parent(data.num_models);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  int flat = 0;
  for (int i = 0; i < data.num_models; ++i) {
    for (int j = i + 1; j < data.num_models; ++j, ++flat) {
      if (data.n[flat] > 0) parent[find(i)] = find(j);
    }
  }
  std::map<int, std::vector<int>> groups;
  for (int m : models) groups[find(m)].push_back(m);
  std::ostringstream os;
  os << groups.size() << " disconnected model cluster(s):";
  for (const auto& [root, members] : groups) {
    os << " {";
    for (std::size_t k = 0; k < members.size(); ++k) {
      os << (k ? "," : "") << members[k];
    }
    os << "}";
  }
  return os.str();
}

}  // namespace detail

// Objective value at arbitrary coefficients (model 0 anchored), for
// diagnostics and derivative checks.
inline double bt_objective(const BtPairData& data,
                           const std::vector<double>& xi, double ridge) {
  std::vector<int> coords(data.num_models, -1);
  for (int m = 1; m < data.num_models; ++m) coords[m] = m - 1;
  return detail::BtObjective{data, coords, ridge}.eval(xi, nullptr, nullptr);
}

// Gradient over the free coordinates (models 1..M-1).
inline std::vector<double> bt_objective_gradient(const BtPairData& data,
                                                 const std::vector<double>& xi,
                                                 double ridge) {
  std::vector<int> coords(data.num_models, -1);
  for (int m = 1; m < data.num_models; ++m) coords[m] = m - 1;
  Eigen::VectorXd grad(data.num_models - 1);
  detail::BtObjective{data, coords, ridge}.eval(xi, &grad, nullptr);
  return {grad.data(), grad.data() + grad.size()};
}

// Maximum-likelihood fit of the reweighted Bradley-Terry objective.
// Models with no battles are dropped (with a warning) before fitting.
inline BtFit fit_bt(const BtPairData& data, const BtOptions& opts = {}) {
  const int m_count = data.num_models;
  if (m_count < 2) throw InsufficientDataError("need at least two models");

  BtFit fit;
  fit.ridge = opts.ridge;
  fit.total = data.total;
  fit.xi.assign(m_count, 0.0);

  std::vector<int> active;
  for (int m = 0; m < m_count; ++m) {
    if (data.model_active(m)) {
      active.push_back(m);
    } else {
      fit.dropped.push_back(m);
      fit.xi[m] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  if (active.size() < 2) {
    throw InsufficientDataError("fewer than two models have battles");
  }
  if (data.total < static_cast<std::int64_t>(active.size())) {
    throw InsufficientDataError("need at least as many battles as models");
  }
  if (opts.warn_on_drop && !fit.dropped.empty()) {
    std::ostringstream os;
    os << fit.dropped.size() << " model(s) without battles dropped:";
    for (int m : fit.dropped) os << " " << m;
    fit.warnings.push_back(os.str());
  }

  fit.anchor = active.front();
  std::vector<int> coord_of_model(m_count, -1);
  for (int m : active) {
    if (m == fit.anchor) continue;
    coord_of_model[m] = static_cast<int>(fit.free_models.size());
    fit.free_models.push_back(m);
  }
  const int dim = static_cast<int>(fit.free_models.size());

  detail::BtObjective obj{data, coord_of_model, opts.ridge};
  Eigen::VectorXd grad(dim);
  Eigen::MatrixXd hess(dim, dim);
  double f = obj.eval(fit.xi, &grad, &hess);

  const auto apply_step = [&](const Eigen::VectorXd& step, double scale) {
    std::vector<double> next = fit.xi;
    for (int c = 0; c < dim; ++c) next[fit.free_models[c]] += scale * step(c);
    return next;
  };
  const auto max_free_abs = [&] {
    double v = 0.0;
    for (int c = 0; c < dim; ++c) {
      v = std::max(v, std::fabs(fit.xi[fit.free_models[c]]));
    }
    return v;
  };
  // An exact-MLE fit that "converges" with saturated win rates is perfect
  // separation: the objective has no finite minimizer there.
  const auto check_identifiable = [&] {
    if (opts.ridge == 0.0 && max_free_abs() > 15.0) {
      throw NotIdentifiableError(
          "Bradley-Terry objective has no finite minimizer (perfect "
          "separation or disconnected data); rerun with a positive ridge");
    }
  };

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    fit.grad_norm = dim == 0 ? 0.0 : grad.cwiseAbs().maxCoeff();
    fit.iterations = iter;
    if (fit.grad_norm < opts.tolerance) {
      check_identifiable();
      return fit;
    }

    Eigen::VectorXd step;
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (llt.info() == Eigen::Success) {
      step = llt.solve(-grad);
    } else {
      // Indefinite or singular curvature: plain descent step.
      step = -grad;
    }

    // Near the optimum the objective can no longer strictly decrease in
    // double precision; allow ulp-level slack so the full Newton step is
    // still taken and the gradient collapses.
    const double noise =
        16.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::fabs(f));
    double scale = 1.0;
    bool moved = false;
    for (int halvings = 0; halvings < 60; ++halvings, scale *= 0.5) {
      const std::vector<double> next = apply_step(step, scale);
      const double f_next = obj.eval(next, nullptr, nullptr);
      if (f_next <= f + noise) {
        moved = next != fit.xi;
        fit.xi = next;
        f = f_next;
        break;
      }
    }
    if (!moved) {
      // stalled at floating-point resolution
      fit.iterations = iter + 1;
      check_identifiable();
      return fit;
    }
    f = obj.eval(fit.xi, &grad, &hess);

    if (opts.ridge == 0.0 && max_free_abs() > 36.0) {
      throw NotIdentifiableError(
          "Bradley-Terry objective has no finite minimizer (perfect "
          "separation or disconnected data); rerun with a positive ridge");
    }
  }
  fit.iterations = opts.max_iterations;
  fit.grad_norm = dim == 0 ? 0.0 : grad.cwiseAbs().maxCoeff();
  if (fit.grad_norm >= opts.tolerance && opts.ridge == 0.0) {
    throw NotIdentifiableError(
        "no convergence in " + std::to_string(opts.max_iterations) +
        " iterations with ridge 0; rerun with a positive ridge");
  }
  return fit;
}

inline BtFit fit_bt(const BattleLog& log, const BtOptions& opts = {}) {
  return fit_bt(aggregate_battles(log), opts);
}

// Sandwich covariance (1/T) H^-1 G H^-1 of the fitted free coordinates,
// where H is the averaged Hessian of the objective at the fit and G the
// averaged outer product of per-record gradients. Valid under
// misspecification of the logistic form.
inline Eigen::MatrixXd sandwich_covariance(const BtFit& fit,
                                           const BtPairData& data) {
  const int dim = static_cast<int>(fit.free_models.size());
  std::vector<int> coord_of_model(data.num_models, -1);
  for (int c = 0; c < dim; ++c) coord_of_model[fit.free_models[c]] = c;

  Eigen::MatrixXd h_bar = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd g_bar = Eigen::MatrixXd::Zero(dim, dim);
  const double t = static_cast<double>(data.total);
  int flat = 0;
  for (int i = 0; i < data.num_models; ++i) {
    for (int j = i + 1; j < data.num_models; ++j, ++flat) {
      if (data.n[flat] == 0) continue;
      const double z = fit.xi[j] - fit.xi[i];
      const double s = sigmoid(z);
      const double d2z = (data.w_one[flat] + data.w_zero[flat]) * s * (1.0 - s);
      // sum_t (w_t (s - h_t))^2 from the squared-weight moments
      const double g2 = s * s * data.w2[flat] - 2.0 * s * data.w2_h[flat] +
                        data.w2_h2[flat];
      const int ci = coord_of_model[i];
      const int cj = coord_of_model[j];
      const auto scatter = [&](Eigen::MatrixXd& mat, double v) {
        if (cj >= 0) mat(cj, cj) += v;
        if (ci >= 0) mat(ci, ci) += v;
        if (ci >= 0 && cj >= 0) {
          mat(ci, cj) -= v;
          mat(cj, ci) -= v;
        }
      };
      scatter(h_bar, d2z);
      scatter(g_bar, g2);
    }
  }
  h_bar /= t;
  g_bar /= t;
  for (int c = 0; c < dim; ++c) h_bar(c, c) += 2.0 * fit.ridge / t;

  Eigen::LLT<Eigen::MatrixXd> llt(h_bar);
  if (llt.info() != Eigen::Success) {
    throw SingularInformationError(
        "singular information matrix; " +
        detail::describe_components(data, fit.free_models));
  }
  const Eigen::MatrixXd h_inv =
      llt.solve(Eigen::MatrixXd::Identity(dim, dim));
  Eigen::MatrixXd cov = h_inv * g_bar * h_inv / t;
  cov = ((cov + cov.transpose()) / 2.0).eval();  // enforce exact symmetry
  return cov;
}

struct ScoreIntervals {
  double alpha = 0.05;
  bool simultaneous = false;
  // Indexed by model; anchor is the degenerate point {0,0}; dropped models
  // carry NaN bounds.
  std::vector<double> lo;
  std::vector<double> hi;
};

// Per-coordinate normal intervals from a covariance of the free
// coordinates (no multiplicity correction).
inline ScoreIntervals marginal_intervals(const BtFit& fit,
                                         const Eigen::MatrixXd& cov,
                                         double alpha) {
  ScoreIntervals out;
  out.alpha = alpha;
  out.simultaneous = false;
  const std::size_t m_count = fit.xi.size();
  out.lo.assign(m_count, std::numeric_limits<double>::quiet_NaN());
  out.hi.assign(m_count, std::numeric_limits<double>::quiet_NaN());
  out.lo[fit.anchor] = out.hi[fit.anchor] = 0.0;
  const double z = normal_quantile(1.0 - alpha / 2.0);
  for (std::size_t c = 0; c < fit.free_models.size(); ++c) {
    const int m = fit.free_models[c];
    const double half = z * std::sqrt(std::max(0.0, cov(c, c)));
    out.lo[m] = fit.xi[m] - half;
    out.hi[m] = fit.xi[m] + half;
  }
  return out;
}

// Axis-aligned bounding box of the CLT confidence ellipsoid
//   { xi : (xi_hat - xi)' cov^-1 (xi_hat - xi) <= chi2_{1-alpha, dim} },
// which holds all free coordinates simultaneously with probability 1-alpha.
inline ScoreIntervals simultaneous_set(const BtFit& fit,
                                       const Eigen::MatrixXd& cov,
                                       double alpha) {
  const int dim = static_cast<int>(fit.free_models.size());
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw SingularInformationError(
        "simultaneous set requires a positive-definite covariance");
  }
  ScoreIntervals out;
  out.alpha = alpha;
  out.simultaneous = true;
  const std::size_t m_count = fit.xi.size();
  out.lo.assign(m_count, std::numeric_limits<double>::quiet_NaN());
  out.hi.assign(m_count, std::numeric_limits<double>::quiet_NaN());
  out.lo[fit.anchor] = out.hi[fit.anchor] = 0.0;
  const double q = chi2_quantile(1.0 - alpha, static_cast<double>(dim));
  for (int c = 0; c < dim; ++c) {
    const int m = fit.free_models[c];
    const double half = std::sqrt(q * std::max(0.0, cov(c, c)));
    out.lo[m] = fit.xi[m] - half;
    out.hi[m] = fit.xi[m] + half;
  }
  return out;
}

struct RankingReport {
  double alpha = 0.05;
  // rank_lower[m] counts models whose intervals sit entirely above m's
  // (optimistic rank: true rank is no better with probability 1-alpha);
  // rank_upper[m] counts models whose intervals are not entirely below m's
  // (pessimistic rank: true rank is no worse).
  std::vector<int> rank_lower;
  std::vector<int> rank_upper;
};

inline RankingReport approximate_ranks(const ScoreIntervals& intervals) {
  const std::size_t m_count = intervals.lo.size();
  RankingReport report;
  report.alpha = intervals.alpha;
  report.rank_lower.assign(m_count, 0);
  report.rank_upper.assign(m_count, 0);
  for (std::size_t m = 0; m < m_count; ++m) {
    if (std::isnan(intervals.lo[m])) {
      report.rank_lower[m] = report.rank_upper[m] = -1;  // dropped model
      continue;
    }
    int certainly_better = 0;
    int possibly_better = 0;
    for (std::size_t other = 0; other < m_count; ++other) {
      if (other == m || std::isnan(intervals.lo[other])) continue;
      if (intervals.lo[other] > intervals.hi[m]) ++certainly_better;
      if (intervals.hi[other] > intervals.lo[m]) ++possibly_better;
    }
    report.rank_lower[m] = 1 + certainly_better;
    report.rank_upper[m] = 1 + possibly_better;
  }
  return report;
}

// True-score ranks with rank 1 for the largest score; ties share the better
// rank.
inline std::vector<int> true_ranks(const std::vector<double>& scores) {
  std::vector<int> ranks(scores.size(), 1);
  for (std::size_t m = 0; m < scores.size(); ++m) {
    for (std::size_t other = 0; other < scores.size(); ++other) {
      if (scores[other] > scores[m]) ++ranks[m];
    }
  }
  return ranks;
}

struct BootstrapOptions {
  int replicates = 200;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  BtOptions fit;
  unsigned threads = 1;
  int max_retries = 10;  // redraws allowed when a resample drops a model
};

namespace detail {

// Linear-interpolation quantile of a sorted sample.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t k = static_cast<std::size_t>(pos);
  if (k + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(k);
  return sorted[k] * (1.0 - frac) + sorted[k + 1] * frac;
}

}  // namespace detail

// Pivot bootstrap: per coordinate, (2 xi_hat - q_{1-a/2}, 2 xi_hat - q_{a/2})
// over B record resamples. Deterministic in the seed; replicate b draws from
// its own derived substream, so threaded and serial runs agree exactly.
inline ScoreIntervals bootstrap_intervals(const BattleLog& log,
                                          const BootstrapOptions& opts) {
  if (opts.replicates < 100) {
    throw ValidationError("bootstrap needs at least 100 replicates");
  }
  const BtPairData base_data = aggregate_battles(log);
  BtOptions fit_opts = opts.fit;
  fit_opts.warn_on_drop = false;
  const BtFit base = fit_bt(base_data, fit_opts);
  const std::size_t t = log.records.size();

  std::vector<std::vector<double>> replicate_xi(
      opts.replicates, std::vector<double>(log.models.size()));
  parallel_for(opts.replicates, opts.threads, [&](std::size_t b) {
    Rng rng(derive_seed(opts.seed, "bootstrap", b));
    for (int attempt = 0;; ++attempt) {
      BtPairData resample(base_data.num_models);
      for (std::size_t k = 0; k < t; ++k) {
        resample.add(log.records[rng.uniform_index(t)]);
      }
      bool complete = true;
      for (int m : base.free_models) {
        if (!resample.model_active(m)) {
          complete = false;
          break;
        }
      }
      if (complete && !resample.model_active(base.anchor)) complete = false;
      if (!complete) {
        if (attempt >= opts.max_retries) {
          throw ValidationError(
              "bootstrap replicate kept dropping a model after " +
              std::to_string(opts.max_retries) + " redraws");
        }
        continue;
      }
      replicate_xi[b] = fit_bt(resample, fit_opts).xi;
      return;
    }
  });

  ScoreIntervals out;
  out.alpha = opts.alpha;
  out.simultaneous = false;
  out.lo.assign(log.models.size(), std::numeric_limits<double>::quiet_NaN());
  out.hi.assign(log.models.size(), std::numeric_limits<double>::quiet_NaN());
  out.lo[base.anchor] = out.hi[base.anchor] = 0.0;
  std::vector<double> values(opts.replicates);
  for (int m : base.free_models) {
    for (int b = 0; b < opts.replicates; ++b) values[b] = replicate_xi[b][m];
    std::sort(values.begin(), values.end());
    const double q_lo = detail::sorted_quantile(values, opts.alpha / 2.0);
    const double q_hi = detail::sorted_quantile(values, 1.0 - opts.alpha / 2.0);
    out.lo[m] = 2.0 * base.xi[m] - q_hi;
    out.hi[m] = 2.0 * base.xi[m] - q_lo;
  }
  return out;
}

}  // namespace pairrank
