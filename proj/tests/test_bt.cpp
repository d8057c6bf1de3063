#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pairrank/bt.hpp"
#include "pairrank/sim.hpp"

using namespace pairrank;

namespace {

BattleLog make_log(int num_models,
                   const std::vector<std::tuple<int, int, double, double>>&
                       battles) {
  BattleLog log;
  for (int i = 0; i < num_models; ++i) {
    log.models.add("m" + std::to_string(i));
  }
  std::int64_t t = 0;
  for (const auto& [a, b, h, p] : battles) {
    BattleRecord r;
    r.time_index = t++;
    r.pair = PairKey{a, b};
    r.outcome = h;
    r.sample_prob = p;
    log.records.push_back(r);
  }
  return log;
}

// Four battles on the single pair of a two-model log: outcomes 1,1,1,0.
BattleLog two_model_three_one() {
  return make_log(
      2, {{0, 1, 1.0, 1.0}, {0, 1, 1.0, 1.0}, {0, 1, 1.0, 1.0},
          {0, 1, 0.0, 1.0}});
}

}  // namespace

TEST_CASE("two-model fit recovers the empirical log odds", "[bt]") {
  BtOptions opts;
  opts.ridge = 0.0;
  const BtFit fit = fit_bt(two_model_three_one(), opts);
  CHECK(fit.xi[0] == 0.0);
  CHECK(fit.xi[1] == Catch::Approx(std::log(3.0)).margin(1e-6));
  CHECK(fit.grad_norm < 1e-8);
}

TEST_CASE("symmetric data forces equal scores", "[bt]") {
  std::vector<std::tuple<int, int, double, double>> battles;
  for (const auto& pair : all_pairs(3)) {
    for (int k = 0; k < 4; ++k) {
      battles.emplace_back(pair.first, pair.second, k % 2 ? 1.0 : 0.0,
                           1.0 / 3.0);
    }
  }
  const BtFit fit = fit_bt(make_log(3, battles));
  for (double v : fit.xi) CHECK(v == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("three-model fit matches a grid-search oracle", "[bt]") {
  // small count table on three models
  const auto log = make_log(3, {{0, 1, 1.0, 1.0 / 3},
                                {0, 1, 1.0, 1.0 / 3},
                                {0, 1, 0.0, 1.0 / 3},
                                {0, 2, 1.0, 1.0 / 3},
                                {0, 2, 0.0, 1.0 / 3},
                                {0, 2, 0.0, 1.0 / 3},
                                {1, 2, 1.0, 1.0 / 3},
                                {1, 2, 0.5, 1.0 / 3},
                                {1, 2, 0.0, 1.0 / 3}});
  const BtPairData data = aggregate_battles(log);
  const double ridge = 1e-6;

  // coarse-to-fine brute-force minimization over xi in [-3,3]^2
  double best1 = 0.0, best2 = 0.0;
  double radius = 3.0;
  double center1 = 0.0, center2 = 0.0;
  for (int level = 0; level < 10; ++level) {
    double best_f = std::numeric_limits<double>::infinity();
    const int grid = 40;
    for (int i = 0; i <= grid; ++i) {
      for (int j = 0; j <= grid; ++j) {
        const double x1 = center1 - radius + 2.0 * radius * i / grid;
        const double x2 = center2 - radius + 2.0 * radius * j / grid;
        const double f = bt_objective(data, {0.0, x1, x2}, ridge);
        if (f < best_f) {
          best_f = f;
          best1 = x1;
          best2 = x2;
        }
      }
    }
    center1 = best1;
    center2 = best2;
    radius = radius * 2.0 / grid;  // keep neighbors of the best cell
  }

  BtOptions opts;
  opts.ridge = ridge;
  const BtFit fit = fit_bt(data, opts);
  CHECK(fit.xi[1] == Catch::Approx(best1).margin(1e-4));
  CHECK(fit.xi[2] == Catch::Approx(best2).margin(1e-4));
}

TEST_CASE("objective gradient matches central differences", "[bt]") {
  Rng rng(2718);
  const auto truth = draw_coefficients(4, 2.0, 3.0, 41);
  const auto log = synthesize_battles(truth, 400, 42);
  const BtPairData data = aggregate_battles(log);
  const double ridge = 1e-4;
  for (int point = 0; point < 20; ++point) {
    std::vector<double> xi(4, 0.0);
    for (int m = 1; m < 4; ++m) xi[m] = 4.0 * rng.uniform() - 2.0;
    const auto grad = bt_objective_gradient(data, xi, ridge);
    for (int m = 1; m < 4; ++m) {
      const double h = 1e-6;
      auto hi = xi, lo = xi;
      hi[m] += h;
      lo[m] -= h;
      const double fd =
          (bt_objective(data, hi, ridge) - bt_objective(data, lo, ridge)) /
          (2.0 * h);
      CHECK(grad[m - 1] ==
            Catch::Approx(fd).epsilon(1e-6).margin(1e-8));
    }
  }
}

TEST_CASE("perfect separation without ridge is flagged", "[bt]") {
  const auto log = make_log(2, {{0, 1, 1.0, 1.0},
                                {0, 1, 1.0, 1.0},
                                {0, 1, 1.0, 1.0},
                                {0, 1, 1.0, 1.0}});
  BtOptions opts;
  opts.ridge = 0.0;
  CHECK_THROWS_AS(fit_bt(log, opts), NotIdentifiableError);
  // a positive ridge makes the optimum finite
  opts.ridge = 1e-6;
  CHECK_NOTHROW(fit_bt(log, opts));
}

TEST_CASE("models without battles are dropped with a warning", "[bt]") {
  const auto log = make_log(3, {{0, 1, 1.0, 1.0},
                                {0, 1, 0.0, 1.0},
                                {0, 1, 0.5, 1.0}});
  const BtFit fit = fit_bt(log);
  CHECK(fit.dropped == std::vector<int>{2});
  CHECK_FALSE(fit.includes(2));
  CHECK(fit.free_models == std::vector<int>{1});
  REQUIRE_FALSE(fit.warnings.empty());
}

TEST_CASE("sandwich variance matches the analytic one-parameter case",
          "[bt]") {
  // Binomial 3-of-4 on a single pair: Var(xi_1) = 1/(n p q) = 4/3, and the
  // finite-difference Hessian of the objective confirms the bread.
  const auto log = two_model_three_one();
  const BtPairData data = aggregate_battles(log);
  BtOptions opts;
  opts.ridge = 0.0;
  const BtFit fit = fit_bt(data, opts);
  const Eigen::MatrixXd cov = sandwich_covariance(fit, data);
  REQUIRE(cov.rows() == 1);
  CHECK(cov(0, 0) == Catch::Approx(4.0 / 3.0).epsilon(1e-9));

  const double h = 1e-4;
  const double f0 = bt_objective(data, {0.0, fit.xi[1] - h}, 0.0);
  const double f1 = bt_objective(data, {0.0, fit.xi[1]}, 0.0);
  const double f2 = bt_objective(data, {0.0, fit.xi[1] + h}, 0.0);
  const double hess_fd = (f2 - 2.0 * f1 + f0) / (h * h);
  // per-record gradient sum of squares at the optimum
  const double p = sigmoid(fit.xi[1]);
  const double g_sum = 3.0 * (p - 1.0) * (p - 1.0) + p * p;
  const double t = 4.0;
  const double sandwich_fd = (t / hess_fd) * (g_sum / t) * (t / hess_fd) / t;
  CHECK(cov(0, 0) == Catch::Approx(sandwich_fd).margin(1e-6));
}

TEST_CASE("duplicating every record halves the covariance", "[bt]") {
  const auto truth = draw_coefficients(4, 2.0, 3.0, 7);
  const auto log = synthesize_battles(truth, 600, 8);
  BtPairData once = aggregate_battles(log);
  BtPairData twice(4);
  for (const auto& r : log.records) {
    twice.add(r);
    twice.add(r);
  }
  BtOptions opts;
  opts.ridge = 0.0;
  const BtFit fit1 = fit_bt(once, opts);
  const BtFit fit2 = fit_bt(twice, opts);
  const Eigen::MatrixXd c1 = sandwich_covariance(fit1, once);
  const Eigen::MatrixXd c2 = sandwich_covariance(fit2, twice);
  for (int i = 0; i < c1.rows(); ++i) {
    for (int j = 0; j < c1.cols(); ++j) {
      CHECK(c2(i, j) == Catch::Approx(0.5 * c1(i, j)).margin(1e-12));
    }
  }
}

TEST_CASE("sandwich approaches the inverse Hessian when well specified",
          "[bt][slow]") {
  // Classic equivalence for a correctly specified likelihood with constant
  // weights; unit weights keep the inverse-Hessian reference meaningful.
  const auto truth = draw_coefficients(5, 2.0, 3.0, 71);
  auto log = synthesize_battles(truth, 50000, 72);
  for (auto& r : log.records) r.sample_prob = 1.0;
  const BtPairData data = aggregate_battles(log);
  BtOptions opts;
  opts.ridge = 0.0;
  const BtFit fit = fit_bt(data, opts);
  const Eigen::MatrixXd sandwich = sandwich_covariance(fit, data);

  // model-trusting covariance: inverse averaged Hessian / T
  const int dim = 4;
  Eigen::MatrixXd hess(dim, dim);
  hess.setZero();
  const double h = 1e-4;
  for (int a = 0; a < dim; ++a) {
    for (int b = 0; b < dim; ++b) {
      std::vector<double> pp(5, 0.0), pm(5, 0.0), mp(5, 0.0), mm(5, 0.0);
      for (int m = 1; m < 5; ++m) pp[m] = pm[m] = mp[m] = mm[m] = fit.xi[m];
      pp[a + 1] += h;
      pp[b + 1] += h;
      pm[a + 1] += h;
      pm[b + 1] -= h;
      mp[a + 1] -= h;
      mp[b + 1] += h;
      mm[a + 1] -= h;
      mm[b + 1] -= h;
      hess(a, b) = (bt_objective(data, pp, 0.0) - bt_objective(data, pm, 0.0) -
                    bt_objective(data, mp, 0.0) + bt_objective(data, mm, 0.0)) /
                   (4.0 * h * h);
    }
  }
  const double t = static_cast<double>(data.total);
  const Eigen::MatrixXd model_cov = (hess / t).inverse() / t;
  for (int i = 0; i < dim; ++i) {
    CHECK(std::fabs(sandwich(i, i) - model_cov(i, i)) <=
          0.10 * model_cov(i, i));
  }
}

TEST_CASE("relabeling the anchor preserves pairwise differences", "[bt]") {
  const auto truth = draw_coefficients(4, 2.0, 3.0, 19);
  const auto log = synthesize_battles(truth, 2000, 20);
  const BtFit fit = fit_bt(log);

  // same battles with model indices rotated so a different model anchors
  BattleLog rotated;
  for (int i = 0; i < 4; ++i) rotated.models.add("r" + std::to_string(i));
  for (const auto& r : log.records) {
    const int a = (r.pair.first + 1) % 4;
    const int b = (r.pair.second + 1) % 4;
    auto [pair, h] = canonicalize_pair(a, b, r.outcome);
    BattleRecord nr = r;
    nr.pair = pair;
    nr.outcome = h;
    rotated.records.push_back(nr);
  }
  const BtFit fit2 = fit_bt(rotated);
  for (int m = 0; m < 4; ++m) {
    for (int other = 0; other < 4; ++other) {
      const double d1 = fit.xi[m] - fit.xi[other];
      const double d2 = fit2.xi[(m + 1) % 4] - fit2.xi[(other + 1) % 4];
      CHECK(d1 == Catch::Approx(d2).margin(1e-8));
    }
  }
}

TEST_CASE("an extra win never lowers a model's score", "[bt]") {
  Rng rng(55);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<std::tuple<int, int, double, double>> battles;
    for (const auto& pair : all_pairs(3)) {
      for (int k = 0; k < 3; ++k) {
        battles.emplace_back(pair.first, pair.second,
                             rng.bernoulli(0.5) ? 1.0 : 0.0, 1.0 / 3.0);
      }
    }
    // keep the data connected and non-separated with a tie on each pair
    for (const auto& pair : all_pairs(3)) {
      battles.emplace_back(pair.first, pair.second, 0.5, 1.0 / 3.0);
    }
    BtOptions opts;
    opts.ridge = 0.0;
    const BtFit before = fit_bt(make_log(3, battles), opts);
    auto extended = battles;
    extended.emplace_back(0, 2, 1.0, 1.0 / 3.0);  // a win for model 2
    const BtFit after = fit_bt(make_log(3, extended), opts);
    CHECK(after.xi[2] >= before.xi[2] - 1e-9);
  }
}

TEST_CASE("marginal and simultaneous intervals coincide for two models",
          "[bt]") {
  const auto log = two_model_three_one();
  const BtPairData data = aggregate_battles(log);
  BtOptions opts;
  opts.ridge = 0.0;
  const BtFit fit = fit_bt(data, opts);
  const Eigen::MatrixXd cov = sandwich_covariance(fit, data);
  for (double alpha : {0.2, 0.1, 0.05, 0.01}) {
    const auto marginal = marginal_intervals(fit, cov, alpha);
    const auto simultaneous = simultaneous_set(fit, cov, alpha);
    CHECK(marginal.lo[1] == Catch::Approx(simultaneous.lo[1]).epsilon(1e-9));
    CHECK(marginal.hi[1] == Catch::Approx(simultaneous.hi[1]).epsilon(1e-9));
  }
}

TEST_CASE("simultaneous widening matches the chi-square ratio", "[bt]") {
  const auto truth = draw_coefficients(10, 2.0, 4.0, 90);
  const auto log = synthesize_battles(truth, 20000, 91);
  const BtPairData data = aggregate_battles(log);
  const BtFit fit = fit_bt(data);
  const Eigen::MatrixXd cov = sandwich_covariance(fit, data);
  const auto marginal = marginal_intervals(fit, cov, 0.05);
  const auto simultaneous = simultaneous_set(fit, cov, 0.05);
  const double expected =
      std::sqrt(chi2_quantile(0.95, 9)) / normal_quantile(0.975);
  CHECK(expected == Catch::Approx(2.0986).margin(1e-3));
  for (int m : fit.free_models) {
    const double ratio = (simultaneous.hi[m] - simultaneous.lo[m]) /
                         (marginal.hi[m] - marginal.lo[m]);
    CHECK(ratio == Catch::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("rank bounds from disjoint and overlapping intervals", "[bt]") {
  ScoreIntervals disjoint;
  disjoint.lo = {4.0, 2.0, 0.0};
  disjoint.hi = {5.0, 3.0, 1.0};
  const auto r1 = approximate_ranks(disjoint);
  CHECK(r1.rank_lower == std::vector<int>{1, 2, 3});
  CHECK(r1.rank_upper == std::vector<int>{1, 2, 3});

  ScoreIntervals overlap;
  overlap.lo = {0.0, 0.0, 0.0};
  overlap.hi = {1.0, 1.0, 1.0};
  const auto r2 = approximate_ranks(overlap);
  CHECK(r2.rank_lower == std::vector<int>{1, 1, 1});
  CHECK(r2.rank_upper == std::vector<int>{3, 3, 3});
}

TEST_CASE("rank bounds match a double-loop oracle on random intervals",
          "[bt]") {
  Rng rng(123);
  for (int rep = 0; rep < 50; ++rep) {
    const int m_count = 8;
    ScoreIntervals intervals;
    for (int m = 0; m < m_count; ++m) {
      const double a = 4.0 * rng.uniform() - 2.0;
      const double b = a + 2.0 * rng.uniform();
      intervals.lo.push_back(a);
      intervals.hi.push_back(b);
    }
    const auto ranks = approximate_ranks(intervals);
    for (int m = 0; m < m_count; ++m) {
      int certainly_above = 0;
      int possibly_above = 0;
      for (int o = 0; o < m_count; ++o) {
        if (o == m) continue;
        if (intervals.lo[o] > intervals.hi[m]) ++certainly_above;
        if (intervals.hi[o] > intervals.lo[m]) ++possibly_above;
      }
      CHECK(ranks.rank_lower[m] == 1 + certainly_above);
      CHECK(ranks.rank_upper[m] == 1 + possibly_above);
      CHECK(ranks.rank_lower[m] <= ranks.rank_upper[m]);
      CHECK(ranks.rank_lower[m] >= 1);
      CHECK(ranks.rank_upper[m] <= m_count);
    }
  }
}

TEST_CASE("bootstrap interval brackets the two-model closed form", "[bt]") {
  BootstrapOptions opts;
  opts.replicates = 200;
  opts.alpha = 0.05;
  opts.seed = 9;
  opts.fit.ridge = 1e-6;
  const auto intervals = bootstrap_intervals(two_model_three_one(), opts);
  CHECK(intervals.lo[1] <= std::log(3.0));
  CHECK(intervals.hi[1] >= std::log(3.0));
  CHECK(intervals.lo[0] == 0.0);
  CHECK(intervals.hi[0] == 0.0);
}

TEST_CASE("bootstrap on all-tie data degenerates to a point at zero",
          "[bt]") {
  std::vector<std::tuple<int, int, double, double>> battles;
  for (int t = 0; t < 40; ++t) battles.emplace_back(0, 1, 0.5, 1.0);
  BootstrapOptions opts;
  opts.replicates = 100;
  opts.seed = 5;
  const auto intervals = bootstrap_intervals(make_log(2, battles), opts);
  CHECK(intervals.lo[1] == Catch::Approx(0.0).margin(1e-6));
  CHECK(intervals.hi[1] == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("bootstrap is deterministic in the seed and thread count", "[bt]") {
  const auto truth = draw_coefficients(3, 2.0, 3.0, 60);
  const auto log = synthesize_battles(truth, 300, 61);
  BootstrapOptions opts;
  opts.replicates = 120;
  opts.seed = 77;
  const auto a = bootstrap_intervals(log, opts);
  const auto b = bootstrap_intervals(log, opts);
  opts.threads = 4;
  const auto c = bootstrap_intervals(log, opts);
  for (int m = 0; m < 3; ++m) {
    CHECK(a.lo[m] == b.lo[m]);
    CHECK(a.hi[m] == b.hi[m]);
    CHECK(a.lo[m] == c.lo[m]);
    CHECK(a.hi[m] == c.hi[m]);
  }
}

TEST_CASE("true ranks rank the best model first", "[bt]") {
  CHECK(true_ranks({0.0, 2.0, 1.0}) == std::vector<int>{3, 1, 2});
  CHECK(true_ranks({1.0, 1.0, 0.0}) == std::vector<int>{1, 1, 3});
}
