#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pairrank/sim.hpp"

using namespace pairrank;

TEST_CASE("coefficient draws are scaled, anchored, deterministic", "[sim]") {
  const auto xi = draw_coefficients(8, 2.0, 4.0, 123);
  REQUIRE(xi.size() == 8);
  CHECK(xi[0] == 0.0);
  for (double v : xi) {
    // beta draws in [0,1] scaled by 4 then recentered by xi[0] in [0,4]
    CHECK(v >= -4.0);
    CHECK(v <= 4.0);
  }
  CHECK(xi == draw_coefficients(8, 2.0, 4.0, 123));
  CHECK(xi != draw_coefficients(8, 2.0, 4.0, 124));

  const auto zeros = draw_coefficients(5, 2.0, 0.0, 9);
  for (double v : zeros) CHECK(v == 0.0);

  CHECK_THROWS_AS(draw_coefficients(5, 0.0, 1.0, 1), ValidationError);
}

TEST_CASE("synthesis follows the logistic outcome law", "[sim]") {
  // a 10-point gap makes the stronger model win essentially always
  const auto log = synthesize_battles({0.0, 10.0}, 1000, 5);
  REQUIRE(log.size() == 1000);
  int wins = 0;
  for (const auto& r : log.records) {
    CHECK(r.pair == PairKey{0, 1});
    wins += r.outcome == 1.0 ? 1 : 0;
  }
  CHECK(wins >= 990);

  // an even matchup stays near one half
  const auto even = synthesize_battles({0.0, 0.0}, 1000, 6);
  int even_wins = 0;
  for (const auto& r : even.records) even_wins += r.outcome == 1.0 ? 1 : 0;
  CHECK(even_wins >= 450);
  CHECK(even_wins <= 550);
}

TEST_CASE("empty synthesis yields an empty log", "[sim]") {
  const auto log = synthesize_battles({0.0, 1.0}, 0, 1);
  CHECK(log.size() == 0);
  CHECK(log.models.size() == 2);
}

TEST_CASE("uniform synthesis records the uniform probability", "[sim]") {
  const auto log = synthesize_battles({0.0, 1.0, 2.0}, 100, 2);
  for (const auto& r : log.records) {
    CHECK(r.sample_prob == Catch::Approx(1.0 / 3.0));
  }
}

TEST_CASE("adaptive synthesis records the exact serving distribution",
          "[sim]") {
  SynthesisOptions opts;
  opts.sampling = SamplingPolicy::kAdaptive;
  opts.floor_delta = 0.1;
  const auto log = synthesize_battles({0.0, 1.0, 2.0}, 300, 3, opts);
  REQUIRE(log.size() == 300);
  const double floor = 0.1 / 3.0;
  for (const auto& r : log.records) {
    CHECK(r.sample_prob >= floor - 1e-12);
    CHECK(r.sample_prob <= 1.0);
  }
}

TEST_CASE("coverage experiment on a small config behaves sanely",
          "[sim][slow]") {
  SimConfig cfg;
  cfg.num_models = 5;
  cfg.total = 4000;
  cfg.trials = 40;
  cfg.alpha = 0.05;
  cfg.seed = 11;
  cfg.threads = 2;
  const auto summary = run_coverage_experiment(cfg);
  CHECK(summary.trials == 40);
  CHECK(summary.coverage_mean >= 0.85);
  CHECK(summary.coverage_mean <= 1.0);
  CHECK(summary.width_mean > 0.0);
  CHECK(summary.rank_violation_rate <= 0.15);
  // anchor has no interval
  CHECK(std::isnan(summary.coverage_per_model[0]));
}

TEST_CASE("single-trial summary equals that trial's values", "[sim]") {
  SimConfig cfg;
  cfg.num_models = 4;
  cfg.total = 800;
  cfg.trials = 1;
  cfg.seed = 21;
  const auto summary = run_coverage_experiment(cfg);
  for (int m = 1; m < 4; ++m) {
    const double c = summary.coverage_per_model[m];
    CHECK((c == 0.0 || c == 1.0));
  }
  CHECK((summary.rank_violation_rate == 0.0 ||
         summary.rank_violation_rate == 1.0));
}

TEST_CASE("coverage experiment is deterministic across thread counts",
          "[sim]") {
  SimConfig cfg;
  cfg.num_models = 4;
  cfg.total = 500;
  cfg.trials = 6;
  cfg.seed = 31;
  cfg.threads = 1;
  const auto serial = run_coverage_experiment(cfg);
  cfg.threads = 4;
  const auto threaded = run_coverage_experiment(cfg);
  CHECK(serial.coverage_mean == threaded.coverage_mean);
  CHECK(serial.width_mean == threaded.width_mean);
  CHECK(serial.rank_violation_rate == threaded.rank_violation_rate);
}

TEST_CASE("efficiency experiment produces nonincreasing width curves",
          "[sim][slow]") {
  EfficiencyConfig cfg;
  cfg.num_models = 6;
  cfg.checkpoints = {500, 1000, 2000, 4000};
  cfg.seeds = 6;
  cfg.seed = 41;
  cfg.threads = 2;
  cfg.target_width = 0.5;
  const auto summary = run_efficiency_experiment(cfg);
  REQUIRE(summary.uniform.size() == 4);
  REQUIRE(summary.adaptive.size() == 4);
  for (std::size_t k = 1; k < summary.uniform.size(); ++k) {
    CHECK(summary.uniform[k].win_width_mean <
          summary.uniform[k - 1].win_width_mean);
    CHECK(summary.adaptive[k].win_width_mean <
          summary.adaptive[k - 1].win_width_mean);
  }
  CHECK(summary.samples_to_target_uniform > 0.0);
  CHECK(summary.samples_to_target_adaptive > 0.0);
  CHECK(summary.sample_ratio > 0.0);
}

TEST_CASE("floor of one makes adaptive match uniform statistically",
          "[sim][slow]") {
  EfficiencyConfig cfg;
  cfg.num_models = 5;
  cfg.checkpoints = {1000, 2000};
  cfg.seeds = 8;
  cfg.seed = 51;
  cfg.floor_delta = 1.0;  // adaptive rule drowned by the uniform floor
  cfg.threads = 2;
  const auto summary = run_efficiency_experiment(cfg);
  for (std::size_t k = 0; k < summary.uniform.size(); ++k) {
    const double diff = std::fabs(summary.uniform[k].win_width_mean -
                                  summary.adaptive[k].win_width_mean);
    const double band = 3.0 * std::sqrt(summary.uniform[k].win_width_se *
                                            summary.uniform[k].win_width_se +
                                        summary.adaptive[k].win_width_se *
                                            summary.adaptive[k].win_width_se);
    CHECK(diff <= band + 1e-9);
  }
}

TEST_CASE("replay at the full log length matches a direct fit", "[sim]") {
  const auto truth = draw_coefficients(4, 2.0, 4.0, 61);
  const auto log = synthesize_battles(truth, 3000, 62);
  ReplayOptions opts;
  opts.checkpoints = {3000};
  const auto result = replay(log, opts);
  REQUIRE(result.snapshots.size() == 1);
  const auto& snap = result.snapshots[0];
  CHECK(snap.t == 3000);

  const BtFit direct = fit_bt(log);
  for (int m = 0; m < 4; ++m) {
    CHECK(snap.xi[m] == direct.xi[m]);
  }
}

TEST_CASE("replay widths shrink along growing prefixes", "[sim][slow]") {
  const auto truth = draw_coefficients(5, 2.0, 4.0, 71);
  const auto log = synthesize_battles(truth, 32000, 72);
  ReplayOptions opts;
  opts.checkpoints = {2000, 8000, 32000};
  const auto result = replay(log, opts);
  REQUIRE(result.snapshots.size() == 3);
  CHECK(result.snapshots[1].median_width <
        result.snapshots[0].median_width);
  CHECK(result.snapshots[2].median_width <
        result.snapshots[1].median_width);
}

TEST_CASE("replay truncates out-of-range checkpoints with a warning",
          "[sim]") {
  const auto truth = draw_coefficients(3, 2.0, 4.0, 81);
  const auto log = synthesize_battles(truth, 500, 82);
  ReplayOptions opts;
  opts.checkpoints = {400, 9999};
  const auto result = replay(log, opts);
  REQUIRE(result.snapshots.size() == 2);
  CHECK(result.snapshots[1].t == 500);
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("9999") != std::string::npos);

  BattleLog empty;
  empty.models.add("a");
  CHECK_THROWS_AS(replay(empty, opts), InsufficientDataError);
}

TEST_CASE("replay is deterministic", "[sim]") {
  const auto truth = draw_coefficients(4, 2.0, 4.0, 91);
  const auto log = synthesize_battles(truth, 2000, 92);
  ReplayOptions opts;
  opts.checkpoints = {500, 1000, 2000};
  const auto a = replay(log, opts);
  const auto b = replay(log, opts);
  REQUIRE(a.snapshots.size() == b.snapshots.size());
  for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
    CHECK(a.snapshots[k].xi == b.snapshots[k].xi);
    CHECK(a.snapshots[k].lo == b.snapshots[k].lo);
    CHECK(a.snapshots[k].hi == b.snapshots[k].hi);
  }
}
