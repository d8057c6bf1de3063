#pragma once

// Synthetic-data experiments: interval coverage, bootstrap-vs-sandwich
// agreement, adaptive-vs-uniform sampling efficiency, and prefix replay of
// a recorded log. Every experiment is a pure function of (config, seed);
// trials run on derived substreams so threaded and serial execution agree
// exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pairrank/bt.hpp"
#include "pairrank/core.hpp"
#include "pairrank/parallel.hpp"
#include "pairrank/rng.hpp"
#include "pairrank/sampler.hpp"
#include "pairrank/win_matrix.hpp"

namespace pairrank {

enum class SamplingPolicy { kUniform, kAdaptive };

inline const char* to_string(SamplingPolicy p) {
  return p == SamplingPolicy::kUniform ? "uniform" : "adaptive";
}

// Ground-truth coefficients: beta(1/gamma, 1/gamma) draws scaled, then
// recentered so the anchor coordinate is exactly 0.
inline std::vector<double> draw_coefficients(int num_models, double gamma,
                                             double scale,
                                             std::uint64_t seed) {
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
  Rng rng(seed);
  std::vector<double> xi(num_models);
  for (auto& v : xi) v = scale * rng.beta(1.0 / gamma, 1.0 / gamma);
  const double anchor = xi.empty() ? 0.0 : xi[0];
  for (auto& v : xi) v -= anchor;
  return xi;
}

struct SynthesisOptions {
  SamplingPolicy sampling = SamplingPolicy::kUniform;
  double floor_delta = 0.05;  // adaptive-policy exploration floor
};

// Streams T battles from a known model: pairs per the sampling policy with
// exact serving probabilities recorded, outcomes Bernoulli of the logistic
// win rate.
inline BattleLog synthesize_battles(const std::vector<double>& xi,
                                    std::int64_t total, std::uint64_t seed,
                                    const SynthesisOptions& opts = {}) {
  const int m = static_cast<int>(xi.size());
  BattleLog log;
  for (int i = 0; i < m; ++i) log.models.add("model_" + std::to_string(i));
  if (total == 0) return log;
  if (m < 2) throw ValidationError("synthesis needs >= 2 models");

  Rng outcome_rng(derive_seed(seed, "outcomes"));
  const auto pairs = all_pairs(m);
  log.records.reserve(total);

  const auto emit = [&](std::int64_t t, const PairKey& pair, double prob) {
    const double win_rate = sigmoid(xi[pair.second] - xi[pair.first]);
    BattleRecord r;
    r.time_index = t;
    r.pair = pair;
    r.outcome = outcome_rng.bernoulli(win_rate) ? 1.0 : 0.0;
    r.sample_prob = prob;
    log.records.push_back(r);
    return log.records.back();
  };

  if (opts.sampling == SamplingPolicy::kUniform) {
    Rng pair_rng(derive_seed(seed, "pairs"));
    const double p = 1.0 / static_cast<double>(pairs.size());
    for (std::int64_t t = 0; t < total; ++t) {
      emit(t, pairs[pair_rng.uniform_index(pairs.size())], p);
    }
  } else {
    SamplerState sampler(m, opts.floor_delta, derive_seed(seed, "sampler"));
    for (std::int64_t t = 0; t < total; ++t) {
      const DrawResult draw = sampler.draw();
      sampler.update(emit(t, draw.pair, draw.probability));
    }
  }
  return log;
}

struct SimConfig {
  int num_models = 10;
  double gamma = 2.0;
  double scale = 4.0;
  std::int64_t total = 20000;  // battles per trial
  int trials = 200;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  SamplingPolicy sampling = SamplingPolicy::kUniform;
  double floor_delta = 0.05;
  double ridge = 1e-6;
  bool with_bootstrap = false;
  int bootstrap_reps = 200;
  unsigned threads = 1;
};

struct CoverageSummary {
  int trials = 0;
  int num_models = 0;
  double alpha = 0.05;
  // Uncorrected per-coordinate sandwich intervals.
  double coverage_mean = 0.0;
  double width_mean = 0.0;
  std::vector<double> coverage_per_model;  // NaN for the anchor
  std::vector<double> width_per_model;
  // Simultaneous chi-square set.
  double simultaneous_coverage = 0.0;
  double rank_violation_rate = 0.0;
  // Bootstrap intervals, when requested.
  std::optional<double> bootstrap_coverage_mean;
  std::optional<double> bootstrap_width_mean;
};

inline CoverageSummary run_coverage_experiment(const SimConfig& cfg) {
  if (cfg.trials < 1 || cfg.num_models < 2 || cfg.total < cfg.num_models) {
    throw ValidationError("coverage experiment config is degenerate");
  }
  struct TrialResult {
    std::vector<bool> covered;        // free coordinates, model order
    std::vector<double> widths;
    bool all_covered = false;         // simultaneous box holds all coords
    bool rank_violated = false;       // some rank_lower exceeds true rank
    double boot_coverage = 0.0;
    double boot_width = 0.0;
  };
  std::vector<TrialResult> results(cfg.trials);

  parallel_for(cfg.trials, cfg.threads, [&](std::size_t trial) {
    const std::uint64_t trial_seed = derive_seed(cfg.seed, "trial", trial);
    const std::vector<double> truth = draw_coefficients(
        cfg.num_models, cfg.gamma, cfg.scale, derive_seed(trial_seed, "coef"));
    SynthesisOptions synth;
    synth.sampling = cfg.sampling;
    synth.floor_delta = cfg.floor_delta;
    const BattleLog log =
        synthesize_battles(truth, cfg.total, derive_seed(trial_seed, "log"),
                           synth);
    BtOptions fit_opts;
    fit_opts.ridge = cfg.ridge;
    const BtPairData data = aggregate_battles(log);
    const BtFit fit = fit_bt(data, fit_opts);
    const Eigen::MatrixXd cov = sandwich_covariance(fit, data);

    TrialResult& r = results[trial];
    const ScoreIntervals marginal = marginal_intervals(fit, cov, cfg.alpha);
    for (int m : fit.free_models) {
      r.covered.push_back(marginal.lo[m] <= truth[m] &&
                          truth[m] <= marginal.hi[m]);
      r.widths.push_back(marginal.hi[m] - marginal.lo[m]);
    }

    const ScoreIntervals simultaneous =
        simultaneous_set(fit, cov, cfg.alpha);
    r.all_covered = true;
    for (int m : fit.free_models) {
      if (!(simultaneous.lo[m] <= truth[m] && truth[m] <= simultaneous.hi[m])) {
        r.all_covered = false;
        break;
      }
    }
    const RankingReport ranks = approximate_ranks(simultaneous);
    const std::vector<int> truth_ranks = true_ranks(truth);
    for (int m = 0; m < cfg.num_models; ++m) {
      if (ranks.rank_lower[m] > truth_ranks[m]) {
        r.rank_violated = true;
        break;
      }
    }

    if (cfg.with_bootstrap) {
      BootstrapOptions boot;
      boot.replicates = cfg.bootstrap_reps;
      boot.alpha = cfg.alpha;
      boot.seed = derive_seed(trial_seed, "boot");
      boot.fit = fit_opts;
      const ScoreIntervals bi = bootstrap_intervals(log, boot);
      int covered = 0;
      double width = 0.0;
      for (int m : fit.free_models) {
        covered += (bi.lo[m] <= truth[m] && truth[m] <= bi.hi[m]) ? 1 : 0;
        width += bi.hi[m] - bi.lo[m];
      }
      const double denom = static_cast<double>(fit.free_models.size());
      r.boot_coverage = covered / denom;
      r.boot_width = width / denom;
    }
  });

  CoverageSummary out;
  out.trials = cfg.trials;
  out.num_models = cfg.num_models;
  out.alpha = cfg.alpha;
  const int free_count = cfg.num_models - 1;
  std::vector<double> cov_sum(free_count, 0.0);
  std::vector<double> width_sum(free_count, 0.0);
  int simultaneous_hits = 0;
  int violations = 0;
  double boot_cov = 0.0;
  double boot_width = 0.0;
  for (const auto& r : results) {
    for (int c = 0; c < free_count; ++c) {
      cov_sum[c] += r.covered[c] ? 1.0 : 0.0;
      width_sum[c] += r.widths[c];
    }
    simultaneous_hits += r.all_covered ? 1 : 0;
    violations += r.rank_violated ? 1 : 0;
    boot_cov += r.boot_coverage;
    boot_width += r.boot_width;
  }
  const double nt = static_cast<double>(cfg.trials);
  out.coverage_per_model.assign(cfg.num_models,
                                std::numeric_limits<double>::quiet_NaN());
  out.width_per_model.assign(cfg.num_models,
                             std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < free_count; ++c) {
    out.coverage_per_model[c + 1] = cov_sum[c] / nt;
    out.width_per_model[c + 1] = width_sum[c] / nt;
    out.coverage_mean += cov_sum[c] / nt;
    out.width_mean += width_sum[c] / nt;
  }
  out.coverage_mean /= free_count;
  out.width_mean /= free_count;
  out.simultaneous_coverage = simultaneous_hits / nt;
  out.rank_violation_rate = violations / nt;
  if (cfg.with_bootstrap) {
    out.bootstrap_coverage_mean = boot_cov / nt;
    out.bootstrap_width_mean = boot_width / nt;
  }
  return out;
}

struct EfficiencyConfig {
  int num_models = 20;
  double gamma = 2.0;
  double scale = 4.0;
  std::vector<std::int64_t> checkpoints;  // default 2000..20000 step 2000
  int seeds = 20;
  double alpha = 0.05;
  double floor_delta = 0.05;
  double ridge = 1e-6;
  double target_width = 0.2;  // win-matrix crossing threshold
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct EfficiencyCurvePoint {
  std::int64_t t = 0;
  double win_width_mean = 0.0;
  double win_width_se = 0.0;
  double bt_width_mean = 0.0;
  double bt_width_se = 0.0;
};

struct EfficiencySummary {
  std::vector<EfficiencyCurvePoint> uniform;
  std::vector<EfficiencyCurvePoint> adaptive;
  double target_width = 0.2;
  // Battles needed for the mean win-matrix width to reach the target,
  // linearly interpolated between checkpoints; extrapolated past the last
  // checkpoint by the 1/sqrt(T) law when never reached (flagged).
  double samples_to_target_uniform = 0.0;
  double samples_to_target_adaptive = 0.0;
  bool extrapolated_uniform = false;
  bool extrapolated_adaptive = false;
  double sample_ratio = 0.0;  // uniform / adaptive
};

namespace detail {

inline std::pair<double, bool> crossing_time(
    const std::vector<EfficiencyCurvePoint>& curve, double target) {
  for (std::size_t k = 0; k < curve.size(); ++k) {
    if (curve[k].win_width_mean <= target) {
      if (k == 0) return {static_cast<double>(curve[0].t), false};
      const double w0 = curve[k - 1].win_width_mean;
      const double w1 = curve[k].win_width_mean;
      const double t0 = static_cast<double>(curve[k - 1].t);
      const double t1 = static_cast<double>(curve[k].t);
      const double frac = (w0 - target) / std::max(w0 - w1, 1e-300);
      return {t0 + frac * (t1 - t0), false};
    }
  }
  // width ~ c / sqrt(T) beyond the horizon
  const auto& last = curve.back();
  const double scale = last.win_width_mean / target;
  return {static_cast<double>(last.t) * scale * scale, true};
}

}  // namespace detail

inline EfficiencySummary run_efficiency_experiment(EfficiencyConfig cfg) {
  if (cfg.checkpoints.empty()) {
    for (std::int64_t t = 2000; t <= 20000; t += 2000) {
      cfg.checkpoints.push_back(t);
    }
  }
  std::sort(cfg.checkpoints.begin(), cfg.checkpoints.end());
  const std::int64_t t_max = cfg.checkpoints.back();
  const std::size_t n_checkpoints = cfg.checkpoints.size();

  struct ArmCurve {
    std::vector<double> win_width;
    std::vector<double> bt_width;
  };
  struct SeedResult {
    ArmCurve uniform, adaptive;
  };
  std::vector<SeedResult> per_seed(cfg.seeds);

  parallel_for(cfg.seeds, cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = derive_seed(cfg.seed, "seed", s);
    const std::vector<double> truth = draw_coefficients(
        cfg.num_models, cfg.gamma, cfg.scale, derive_seed(seed, "coef"));

    for (const SamplingPolicy policy :
         {SamplingPolicy::kUniform, SamplingPolicy::kAdaptive}) {
      SynthesisOptions synth;
      synth.sampling = policy;
      synth.floor_delta = cfg.floor_delta;
      const BattleLog log = synthesize_battles(
          truth, t_max, derive_seed(seed, to_string(policy)), synth);

      ArmCurve& curve = policy == SamplingPolicy::kUniform
                            ? per_seed[s].uniform
                            : per_seed[s].adaptive;
      WinMatrixAccumulator acc(cfg.num_models);
      BtPairData bt_data(cfg.num_models);
      std::size_t next_record = 0;
      for (std::int64_t checkpoint : cfg.checkpoints) {
        for (; next_record < static_cast<std::size_t>(checkpoint);
             ++next_record) {
          acc.add(log.records[next_record]);
          bt_data.add(log.records[next_record]);
        }
        curve.win_width.push_back(
            mean_interval_width(acc.finalize(cfg.alpha)));
        BtOptions fit_opts;
        fit_opts.ridge = cfg.ridge;
        fit_opts.warn_on_drop = false;
        const BtFit fit = fit_bt(bt_data, fit_opts);
        const Eigen::MatrixXd cov = sandwich_covariance(fit, bt_data);
        const ScoreIntervals ii = marginal_intervals(fit, cov, cfg.alpha);
        double w = 0.0;
        for (int m : fit.free_models) w += ii.hi[m] - ii.lo[m];
        curve.bt_width.push_back(w /
                                 static_cast<double>(fit.free_models.size()));
      }
    }
  });

  EfficiencySummary out;
  out.target_width = cfg.target_width;
  const auto reduce = [&](auto select) {
    std::vector<EfficiencyCurvePoint> curve(n_checkpoints);
    for (std::size_t k = 0; k < n_checkpoints; ++k) {
      curve[k].t = cfg.checkpoints[k];
      double sw = 0.0, sw2 = 0.0, sb = 0.0, sb2 = 0.0;
      for (const auto& seed_result : per_seed) {
        const ArmCurve& arm = select(seed_result);
        sw += arm.win_width[k];
        sw2 += arm.win_width[k] * arm.win_width[k];
        sb += arm.bt_width[k];
        sb2 += arm.bt_width[k] * arm.bt_width[k];
      }
      const double n = static_cast<double>(cfg.seeds);
      curve[k].win_width_mean = sw / n;
      curve[k].bt_width_mean = sb / n;
      if (cfg.seeds > 1) {
        curve[k].win_width_se = std::sqrt(
            std::max(0.0, (sw2 / n - curve[k].win_width_mean *
                                         curve[k].win_width_mean) /
                              (n - 1.0)));
        curve[k].bt_width_se = std::sqrt(
            std::max(0.0, (sb2 / n - curve[k].bt_width_mean *
                                         curve[k].bt_width_mean) /
                              (n - 1.0)));
      }
    }
    return curve;
  };
  out.uniform = reduce([](const SeedResult& r) -> const ArmCurve& {
    return r.uniform;
  });
  out.adaptive = reduce([](const SeedResult& r) -> const ArmCurve& {
    return r.adaptive;
  });

  auto [tu, eu] = detail::crossing_time(out.uniform, cfg.target_width);
  auto [ta, ea] = detail::crossing_time(out.adaptive, cfg.target_width);
  out.samples_to_target_uniform = tu;
  out.samples_to_target_adaptive = ta;
  out.extrapolated_uniform = eu;
  out.extrapolated_adaptive = ea;
  out.sample_ratio = tu / ta;
  return out;
}

struct ReplayOptions {
  std::vector<std::int64_t> checkpoints;
  double alpha = 0.05;
  double ridge = 1e-6;
};

struct ReplaySnapshot {
  std::int64_t t = 0;
  std::vector<double> xi;           // NaN for dropped models
  std::vector<double> lo, hi;       // marginal intervals
  std::vector<double> lo_sim, hi_sim;
  std::vector<int> rank_lower, rank_upper;
  std::vector<std::int64_t> battles_per_model;
  double median_width = 0.0;
};

struct ReplayResult {
  std::vector<ReplaySnapshot> snapshots;
  std::vector<std::string> warnings;
};

// Refits scores and intervals on growing prefixes of a recorded log.
// Checkpoints beyond the log are truncated with a warning.
inline ReplayResult replay(const BattleLog& log, const ReplayOptions& opts) {
  if (log.records.empty()) {
    throw InsufficientDataError("replay needs a nonempty log");
  }
  ReplayResult out;
  std::vector<std::int64_t> checkpoints = opts.checkpoints;
  std::sort(checkpoints.begin(), checkpoints.end());
  const std::int64_t t_total = log.size();
  BtPairData data(log.models.size());
  std::vector<std::int64_t> battles_per_model(log.models.size(), 0);
  std::size_t next_record = 0;
  for (std::int64_t checkpoint : checkpoints) {
    std::int64_t t = checkpoint;
    if (t > t_total) {
      out.warnings.push_back("checkpoint " + std::to_string(checkpoint) +
                             " truncated to log length " +
                             std::to_string(t_total));
      t = t_total;
    }
    for (; next_record < static_cast<std::size_t>(t); ++next_record) {
      const auto& r = log.records[next_record];
      data.add(r);
      battles_per_model[r.pair.first] += 1;
      battles_per_model[r.pair.second] += 1;
    }
    BtOptions fit_opts;
    fit_opts.ridge = opts.ridge;
    const BtFit fit = fit_bt(data, fit_opts);
    const Eigen::MatrixXd cov = sandwich_covariance(fit, data);
    const ScoreIntervals marginal = marginal_intervals(fit, cov, opts.alpha);
    const ScoreIntervals simultaneous =
        simultaneous_set(fit, cov, opts.alpha);
    const RankingReport ranks = approximate_ranks(simultaneous);

    ReplaySnapshot snap;
    snap.t = t;
    snap.xi = fit.xi;
    snap.lo = marginal.lo;
    snap.hi = marginal.hi;
    snap.lo_sim = simultaneous.lo;
    snap.hi_sim = simultaneous.hi;
    snap.rank_lower = ranks.rank_lower;
    snap.rank_upper = ranks.rank_upper;
    snap.battles_per_model = battles_per_model;
    std::vector<double> widths;
    for (int m : fit.free_models) {
      widths.push_back(marginal.hi[m] - marginal.lo[m]);
    }
    if (!widths.empty()) {
      std::sort(widths.begin(), widths.end());
      const std::size_t mid = widths.size() / 2;
      snap.median_width = widths.size() % 2 == 1
                              ? widths[mid]
                              : 0.5 * (widths[mid - 1] + widths[mid]);
    }
    out.snapshots.push_back(std::move(snap));
    if (t == t_total && checkpoint >= t_total) break;
  }
  return out;
}

}  // namespace pairrank
