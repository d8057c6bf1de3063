// pairrank: estimate win matrices and Bradley-Terry scores from pairwise
// preference logs, plan active sampling, screen voters, and run the
// simulation experiments. One subcommand per pipeline; every run writes its
// outputs atomically together with a manifest describing exactly what
// produced them.
//
// Exit codes: 0 success, 1 input or usage error, 2 statistical failure
// (non-identifiable fit, singular information).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pairrank/anomaly.hpp"
#include "pairrank/bt.hpp"
#include "pairrank/core.hpp"
#include "pairrank/log_io.hpp"
#include "pairrank/manifest.hpp"
#include "pairrank/np_bt.hpp"
#include "pairrank/parallel.hpp"
#include "pairrank/sampler.hpp"
#include "pairrank/sim.hpp"
#include "pairrank/win_matrix.hpp"

namespace {

using nlohmann::json;
using namespace pairrank;

// ---------------------------------------------------------------------------
// plumbing

// JSON config files: {"flag": value, "subcommand": {"flag": value}}.
// Command-line values override the file.
class JsonConfig : public CLI::ConfigBase {
 public:
  std::string to_config(const CLI::App*, bool, bool,
                        std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::FileError(std::string("config is not valid JSON: ") +
                           e.what());
    }
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const json& node, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : node.items()) {
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        collect(value, nested, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  unsigned threads = default_threads();
  // empty means each subcommand's native format (winmatrix/sample-plan/
  // detect: csv, rank: json)
  std::string format;

  std::string resolve_format(const std::string& native) const {
    return format.empty() ? native : format;
  }
};

std::uint64_t resolve_seed(const GlobalFlags& flags) {
  if (flags.seed) return *flags.seed;
  std::random_device entropy;
  return (static_cast<std::uint64_t>(entropy()) << 32) ^ entropy();
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

// Outputs are staged in memory and written together, so failures leave no
// partial files behind.
struct OutputStage {
  std::vector<std::pair<std::string, std::string>> files;

  void add(const std::string& path, std::string content) {
    files.emplace_back(path, std::move(content));
  }

  void commit(RunManifest& manifest) {
    for (const auto& [path, content] : files) {
      write_atomic(path, content);
      manifest.outputs.push_back(path);
    }
    if (!files.empty()) write_manifest(manifest, files.front().first);
  }
};

ParsedLog load_log(const std::string& path, const std::string& registry_path,
                   BothBadPolicy both_bad, RunManifest& manifest) {
  ParseOptions opts;
  opts.both_bad = both_bad;
  if (!registry_path.empty()) {
    std::ifstream reg(registry_path);
    if (!reg) throw ValidationError("cannot open registry: " + registry_path);
    opts.registry = load_registry(reg);
    manifest.input_digests[registry_path] = file_digest(registry_path);
  }
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open log: " + path);
  manifest.input_digests[path] = file_digest(path);
  ParsedLog parsed = parse_log(in, std::move(opts));
  for (const auto& w : parsed.warnings) {
    manifest.warnings.push_back(w);
    std::cerr << "warning: " << w << "\n";
  }
  return parsed;
}

std::vector<std::int64_t> battles_per_model(const BattleLog& log) {
  std::vector<std::int64_t> counts(log.models.size(), 0);
  for (const auto& r : log.records) {
    counts[r.pair.first] += 1;
    counts[r.pair.second] += 1;
  }
  return counts;
}

// Rows -> CSV or a JSON array of objects, per --format.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const {
    std::ostringstream os;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      os << (c ? "," : "") << columns[c];
    }
    os << '\n';
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        os << (c ? "," : "") << csv_escape(row[c]);
      }
      os << '\n';
    }
    return os.str();
  }

  std::string to_json() const {
    json arr = json::array();
    for (const auto& row : rows) {
      json obj;
      for (std::size_t c = 0; c < row.size(); ++c) obj[columns[c]] = row[c];
      arr.push_back(obj);
    }
    return arr.dump(2) + "\n";
  }

  std::string render(const std::string& format) const {
    return format == "csv" ? to_csv() : to_json();
  }
};

// ---------------------------------------------------------------------------
// winmatrix

struct WinMatrixArgs {
  std::string log_path;
  std::string registry_path;
  std::string out;
  double alpha = 0.05;
};

int run_winmatrix(const WinMatrixArgs& args, const GlobalFlags& flags) {
  RunManifest manifest;
  manifest.subcommand = "winmatrix";
  manifest.seed = resolve_seed(flags);
  manifest.config = {{"alpha", args.alpha},
                     {"log", args.log_path},
                     {"registry", args.registry_path},
                     {"format", flags.format},
                     {"out", args.out}};

  const ParsedLog parsed =
      load_log(args.log_path, args.registry_path, BothBadPolicy::kHalf,
               manifest);
  const WinMatrixEstimate est = estimate_win_matrix(parsed.log, args.alpha);

  Table table;
  table.columns = {"pair_first", "pair_second", "theta_hat", "sigma_hat",
                   "n_obs",      "lo",          "hi"};
  const auto pairs = all_pairs(est.num_models);
  for (std::size_t flat = 0; flat < pairs.size(); ++flat) {
    table.rows.push_back({std::to_string(pairs[flat].first),
                          std::to_string(pairs[flat].second),
                          format_double(est.theta_hat[flat]),
                          format_double(est.sigma_hat[flat]),
                          std::to_string(est.n_obs[flat]),
                          format_double(est.lo[flat]),
                          format_double(est.hi[flat])});
  }
  OutputStage stage;
  stage.add(args.out, table.render(flags.resolve_format("csv")));
  stage.commit(manifest);
  return 0;
}

// ---------------------------------------------------------------------------
// rank

struct RankArgs {
  std::string log_path;
  std::string registry_path;
  std::string out;
  std::string plot_out;
  double alpha = 0.05;
  std::string interval = "sandwich";      // sandwich | bootstrap
  std::string multiplicity = "none";      // none | chi2
  std::string method = "bt";              // bt | npbt
  double ridge = 1e-6;
  int boot_reps = 200;
  std::string both_bad = "half";          // half | drop
};

int run_rank(const RankArgs& args, const GlobalFlags& flags) {
  RunManifest manifest;
  manifest.subcommand = "rank";
  manifest.seed = resolve_seed(flags);
  manifest.config = {{"alpha", args.alpha},
                     {"interval", args.interval},
                     {"multiplicity", args.multiplicity},
                     {"method", args.method},
                     {"ridge", args.ridge},
                     {"boot_reps", args.boot_reps},
                     {"both_bad", args.both_bad},
                     {"log", args.log_path},
                     {"registry", args.registry_path},
                     {"format", flags.format},
                     {"threads", flags.threads},
                     {"out", args.out},
                     {"plot_out", args.plot_out}};

  if (args.interval == "bootstrap" && args.multiplicity == "chi2") {
    throw ValidationError(
        "--multiplicity chi2 applies to sandwich intervals only");
  }

  const ParsedLog parsed = load_log(
      args.log_path, args.registry_path,
      args.both_bad == "drop" ? BothBadPolicy::kDrop : BothBadPolicy::kHalf,
      manifest);
  const BattleLog& log = parsed.log;
  const int m_count = log.models.size();
  const auto battles = battles_per_model(log);

  std::vector<double> score(m_count, 0.0);
  ScoreIntervals intervals;
  std::vector<std::string> notes;

  if (args.method == "npbt") {
    const WinMatrixEstimate est = estimate_win_matrix(log, args.alpha);
    int missing = 0;
    const FullWinMatrix w = FullWinMatrix::from_estimate(est, &missing);
    if (missing > 0) {
      const std::string note = std::to_string(missing) +
                               " pair(s) never sampled; scored as even";
      manifest.warnings.push_back(note);
      std::cerr << "warning: " << note << "\n";
    }
    const NpBtScore np = np_bt_score(w);
    score = np.s;
    const auto var = np_bt_delta_variance(w, est);
    intervals.alpha = args.alpha;
    intervals.simultaneous = args.multiplicity == "chi2";
    const double half_scale =
        args.multiplicity == "chi2"
            ? std::sqrt(chi2_quantile(1.0 - args.alpha, m_count - 1))
            : normal_quantile(1.0 - args.alpha / 2.0);
    for (int m = 0; m < m_count; ++m) {
      const double half = half_scale * std::sqrt(std::max(0.0, var[m]));
      intervals.lo.push_back(score[m] - half);
      intervals.hi.push_back(score[m] + half);
    }
  } else {
    const BtPairData data = aggregate_battles(log);
    BtOptions opts;
    opts.ridge = args.ridge;
    const BtFit fit = fit_bt(data, opts);
    for (const auto& w : fit.warnings) {
      manifest.warnings.push_back(w);
      std::cerr << "warning: " << w << "\n";
    }
    score = fit.xi;
    if (args.interval == "bootstrap") {
      BootstrapOptions boot;
      boot.replicates = args.boot_reps;
      boot.alpha = args.alpha;
      boot.seed = manifest.seed;
      boot.fit = opts;
      boot.threads = flags.threads;
      intervals = bootstrap_intervals(log, boot);
    } else {
      const Eigen::MatrixXd cov = sandwich_covariance(fit, data);
      intervals = args.multiplicity == "chi2"
                      ? simultaneous_set(fit, cov, args.alpha)
                      : marginal_intervals(fit, cov, args.alpha);
    }
  }

  const RankingReport ranks = approximate_ranks(intervals);

  // display convention: scores recentered to mean zero
  double mean = 0.0;
  int counted = 0;
  for (double s : score) {
    if (!std::isnan(s)) {
      mean += s;
      ++counted;
    }
  }
  mean /= std::max(1, counted);

  json leaderboard;
  leaderboard["alpha"] = args.alpha;
  leaderboard["method"] = args.method;
  leaderboard["interval"] = args.interval;
  leaderboard["multiplicity"] = args.multiplicity;
  leaderboard["models"] = json::array();
  Table plot;
  plot.columns = {"model", "xi", "lo", "hi", "rank_lower", "rank_upper"};
  for (int m = 0; m < m_count; ++m) {
    json row;
    row["model"] = log.models.id_of(m);
    if (std::isnan(score[m])) {
      row["dropped"] = true;
    } else {
      row["xi"] = score[m];
      row["xi_centered"] = score[m] - mean;
      row["lo"] = intervals.lo[m];
      row["hi"] = intervals.hi[m];
      row["rank_lower"] = ranks.rank_lower[m];
      row["rank_upper"] = ranks.rank_upper[m];
    }
    row["n_battles"] = battles[m];
    leaderboard["models"].push_back(row);
    if (!std::isnan(score[m])) {
      plot.rows.push_back({log.models.id_of(m), format_double(score[m]),
                           format_double(intervals.lo[m]),
                           format_double(intervals.hi[m]),
                           std::to_string(ranks.rank_lower[m]),
                           std::to_string(ranks.rank_upper[m])});
    }
  }

  OutputStage stage;
  stage.add(args.out, flags.resolve_format("json") == "csv"
                          ? plot.to_csv()
                          : leaderboard.dump(2) + "\n");
  stage.add(args.plot_out.empty() ? args.out + ".plot.csv" : args.plot_out,
            plot.to_csv());
  stage.commit(manifest);
  return 0;
}

// ---------------------------------------------------------------------------
// sample-plan

struct SamplePlanArgs {
  std::string log_path;
  std::string registry_path;
  std::string out;
  int k = 100;
  double delta = 0.05;
};

int run_sample_plan(const SamplePlanArgs& args, const GlobalFlags& flags) {
  RunManifest manifest;
  manifest.subcommand = "sample-plan";
  manifest.seed = resolve_seed(flags);
  manifest.config = {{"k", args.k},
                     {"delta", args.delta},
                     {"log", args.log_path},
                     {"registry", args.registry_path},
                     {"format", flags.format},
                     {"out", args.out}};

  const ParsedLog parsed = load_log(args.log_path, args.registry_path,
                                    BothBadPolicy::kHalf, manifest);
  const BattleLog& log = parsed.log;
  SamplerState state(log.models.size(), args.delta,
                     derive_seed(manifest.seed, "plan"));
  for (const auto& r : log.records) state.update(r);

  // K independent assignments from the current serving distribution; the
  // distribution is requeried by the serving system as outcomes land, so
  // the plan itself does not pretend to know them.
  Table table;
  table.columns = {"rank", "pair", "probability"};
  const auto probs = state.round_probabilities();
  Rng rng(derive_seed(manifest.seed, "plan-draws"));
  for (int k = 0; k < args.k; ++k) {
    const std::size_t flat = rng.categorical(probs);
    const PairKey pair = state.pair_from_flat(static_cast<int>(flat));
    table.rows.push_back(
        {std::to_string(k + 1),
         log.models.id_of(pair.first) + "|" + log.models.id_of(pair.second),
         format_double(probs[flat])});
  }
  OutputStage stage;
  stage.add(args.out, table.render(flags.resolve_format("csv")));
  stage.commit(manifest);
  return 0;
}

// ---------------------------------------------------------------------------
// detect

struct DetectArgs {
  std::string log_path;
  std::string registry_path;
  std::string out;
  std::string key;
  double alpha = 0.1;
  bool mirrored = false;
};

int run_detect(const DetectArgs& args, const GlobalFlags& flags) {
  RunManifest manifest;
  manifest.subcommand = "detect";
  manifest.seed = resolve_seed(flags);
  manifest.config = {{"alpha", args.alpha},
                     {"mirrored", args.mirrored},
                     {"log", args.log_path},
                     {"registry", args.registry_path},
                     {"format", flags.format},
                     {"out", args.out}};
  // the secret key itself stays out of the manifest on purpose
  const ParsedLog parsed = load_log(args.log_path, args.registry_path,
                                    BothBadPolicy::kHalf, manifest);
  DetectOptions opts;
  opts.secret_key = args.key;
  opts.alpha = args.alpha;
  opts.mirrored = args.mirrored;
  const auto ledgers = detect_anomalies(parsed.log, opts);

  Table table;
  table.columns = {"voter_key", "votes_seen",
                   "checkpoints", "max_M",
                   "first_firing_checkpoint", "verdict"};
  for (const auto& ledger : ledgers) {
    std::ostringstream checkpoints;
    for (std::size_t i = 0; i < ledger.checkpoints.size(); ++i) {
      checkpoints << (i ? ";" : "") << ledger.checkpoints[i];
    }
    table.rows.push_back({ledger.voter_key,
                          std::to_string(ledger.p_values.size()),
                          checkpoints.str(), format_double(ledger.max_fisher),
                          std::to_string(ledger.first_firing_checkpoint),
                          to_string(ledger.verdict)});
  }
  OutputStage stage;
  stage.add(args.out, table.render(flags.resolve_format("csv")));
  stage.commit(manifest);
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string out;
  std::string plot_out;
  int m = 10;
  double gamma = 2.0;
  double scale = 4.0;
  std::int64_t t = 20000;
  int trials = 200;
  double alpha = 0.05;
  std::string sampling = "uniform";
  double ridge = 1e-6;
  bool bootstrap = false;
  int boot_reps = 200;
  // efficiency-specific
  std::vector<std::int64_t> checkpoints;
  int seeds = 20;
  double delta = 0.05;
  double target_width = 0.2;
};

int run_simulate_coverage(const SimulateArgs& args, const GlobalFlags& flags) {
  RunManifest manifest;
  manifest.subcommand = "simulate coverage";
  manifest.seed = resolve_seed(flags);
  manifest.config = {{"m", args.m},
                     {"gamma", args.gamma},
                     {"scale", args.scale},
                     {"t", args.t},
                     {"trials", args.trials},
                     {"alpha", args.alpha},
                     {"sampling", args.sampling},
                     {"ridge", args.ridge},
                     {"bootstrap", args.bootstrap},
                     {"boot_reps", args.boot_reps},
                     {"threads", flags.threads},
                     {"out", args.out},
                     {"plot_out", args.plot_out}};

  SimConfig cfg;
  cfg.num_models = args.m;
  cfg.gamma = args.gamma;
  cfg.scale = args.scale;
  cfg.total = args.t;
  cfg.trials = args.trials;
  cfg.alpha = args.alpha;
  cfg.seed = manifest.seed;
  cfg.sampling = args.sampling == "adaptive" ? SamplingPolicy::kAdaptive
                                             : SamplingPolicy::kUniform;
  cfg.ridge = args.ridge;
  cfg.with_bootstrap = args.bootstrap;
  cfg.bootstrap_reps = args.boot_reps;
  cfg.threads = flags.threads;
  const CoverageSummary summary = run_coverage_experiment(cfg);

  json out;
  out["trials"] = summary.trials;
  out["num_models"] = summary.num_models;
  out["alpha"] = summary.alpha;
  out["coverage_mean"] = summary.coverage_mean;
  out["width_mean"] = summary.width_mean;
  out["simultaneous_coverage"] = summary.simultaneous_coverage;
  out["rank_violation_rate"] = summary.rank_violation_rate;
  // binomial Monte-Carlo error bar on the pooled coverage
  const double pooled_n =
      static_cast<double>(summary.trials) * (summary.num_models - 1);
  out["coverage_mc_se"] = std::sqrt(
      summary.coverage_mean * (1.0 - summary.coverage_mean) / pooled_n);
  if (summary.bootstrap_coverage_mean) {
    out["bootstrap_coverage_mean"] = *summary.bootstrap_coverage_mean;
    out["bootstrap_width_mean"] = *summary.bootstrap_width_mean;
  }
  json per_model = json::array();
  for (int m = 1; m < summary.num_models; ++m) {
    per_model.push_back({{"model", m},
                         {"coverage", summary.coverage_per_model[m]},
                         {"width", summary.width_per_model[m]}});
  }
  out["per_model"] = per_model;

  Table plot;
  plot.columns = {"x", "series", "y", "y_lo", "y_hi"};
  for (int m = 1; m < summary.num_models; ++m) {
    const double c = summary.coverage_per_model[m];
    const double se =
        std::sqrt(c * (1.0 - c) / static_cast<double>(summary.trials));
    plot.rows.push_back({std::to_string(m), "coverage", format_double(c),
                         format_double(c - 1.96 * se),
                         format_double(c + 1.96 * se)});
    plot.rows.push_back({std::to_string(m), "width",
                         format_double(summary.width_per_model[m]),
                         format_double(summary.width_per_model[m]),
                         format_double(summary.width_per_model[m])});
  }

  OutputStage stage;
  stage.add(args.out, out.dump(2) + "\n");
  stage.add(args.plot_out.empty() ? args.out + ".plot.csv" : args.plot_out,
            plot.to_csv());
  stage.commit(manifest);
  return 0;
}

int run_simulate_efficiency(const SimulateArgs& args,
                            const GlobalFlags& flags) {
  RunManifest manifest;
  manifest.subcommand = "simulate efficiency";
  manifest.seed = resolve_seed(flags);
  manifest.config = {{"m", args.m},
                     {"gamma", args.gamma},
                     {"scale", args.scale},
                     {"checkpoints", args.checkpoints},
                     {"seeds", args.seeds},
                     {"alpha", args.alpha},
                     {"delta", args.delta},
                     {"target_width", args.target_width},
                     {"ridge", args.ridge},
                     {"threads", flags.threads},
                     {"out", args.out},
                     {"plot_out", args.plot_out}};

  EfficiencyConfig cfg;
  cfg.num_models = args.m;
  cfg.gamma = args.gamma;
  cfg.scale = args.scale;
  cfg.checkpoints = args.checkpoints;
  cfg.seeds = args.seeds;
  cfg.alpha = args.alpha;
  cfg.floor_delta = args.delta;
  cfg.ridge = args.ridge;
  cfg.target_width = args.target_width;
  cfg.seed = manifest.seed;
  cfg.threads = flags.threads;
  const EfficiencySummary summary = run_efficiency_experiment(cfg);

  json out;
  out["target_width"] = summary.target_width;
  out["samples_to_target_uniform"] = summary.samples_to_target_uniform;
  out["samples_to_target_adaptive"] = summary.samples_to_target_adaptive;
  out["extrapolated_uniform"] = summary.extrapolated_uniform;
  out["extrapolated_adaptive"] = summary.extrapolated_adaptive;
  out["sample_ratio_uniform_over_adaptive"] = summary.sample_ratio;

  Table plot;
  plot.columns = {"x", "series", "y", "y_lo", "y_hi"};
  const auto emit_curve = [&](const std::vector<EfficiencyCurvePoint>& curve,
                              const std::string& arm) {
    for (const auto& point : curve) {
      plot.rows.push_back(
          {std::to_string(point.t), arm + "_win_matrix",
           format_double(point.win_width_mean),
           format_double(point.win_width_mean - 1.96 * point.win_width_se),
           format_double(point.win_width_mean + 1.96 * point.win_width_se)});
      plot.rows.push_back(
          {std::to_string(point.t), arm + "_bt_score",
           format_double(point.bt_width_mean),
           format_double(point.bt_width_mean - 1.96 * point.bt_width_se),
           format_double(point.bt_width_mean + 1.96 * point.bt_width_se)});
    }
  };
  emit_curve(summary.uniform, "uniform");
  emit_curve(summary.adaptive, "adaptive");

  OutputStage stage;
  stage.add(args.out, out.dump(2) + "\n");
  stage.add(args.plot_out.empty() ? args.out + ".plot.csv" : args.plot_out,
            plot.to_csv());
  stage.commit(manifest);
  return 0;
}

// ---------------------------------------------------------------------------
// replay

struct ReplayArgs {
  std::string log_path;
  std::string registry_path;
  std::string out;
  std::string plot_out;
  std::vector<std::int64_t> checkpoints;
  double alpha = 0.05;
  double ridge = 1e-6;
};

int run_replay(const ReplayArgs& args, const GlobalFlags& flags) {
  RunManifest manifest;
  manifest.subcommand = "replay";
  manifest.seed = resolve_seed(flags);
  manifest.config = {{"checkpoints", args.checkpoints},
                     {"alpha", args.alpha},
                     {"ridge", args.ridge},
                     {"log", args.log_path},
                     {"registry", args.registry_path},
                     {"out", args.out},
                     {"plot_out", args.plot_out}};

  const ParsedLog parsed = load_log(args.log_path, args.registry_path,
                                    BothBadPolicy::kHalf, manifest);
  ReplayOptions opts;
  opts.checkpoints = args.checkpoints;
  if (opts.checkpoints.empty()) {
    // default: 8 roughly log-spaced prefixes ending at the full log
    const std::int64_t total = parsed.log.size();
    std::int64_t t = total;
    std::vector<std::int64_t> reversed;
    for (int k = 0; k < 8 && t >= std::max<std::int64_t>(
                                      16, 2 * parsed.log.models.size());
         ++k, t /= 2) {
      reversed.push_back(t);
    }
    opts.checkpoints.assign(reversed.rbegin(), reversed.rend());
  }
  opts.alpha = args.alpha;
  opts.ridge = args.ridge;
  const ReplayResult result = replay(parsed.log, opts);
  for (const auto& w : result.warnings) {
    manifest.warnings.push_back(w);
    std::cerr << "warning: " << w << "\n";
  }

  json out;
  out["alpha"] = args.alpha;
  out["snapshots"] = json::array();
  Table plot;
  plot.columns = {"x", "series", "y", "y_lo", "y_hi"};
  for (const auto& snap : result.snapshots) {
    json s;
    s["t"] = snap.t;
    s["median_width"] = snap.median_width;
    s["models"] = json::array();
    for (int m = 0; m < parsed.log.models.size(); ++m) {
      json row;
      row["model"] = parsed.log.models.id_of(m);
      if (std::isnan(snap.xi[m])) {
        row["dropped"] = true;
      } else {
        row["xi"] = snap.xi[m];
        row["lo"] = snap.lo[m];
        row["hi"] = snap.hi[m];
        row["lo_simultaneous"] = snap.lo_sim[m];
        row["hi_simultaneous"] = snap.hi_sim[m];
        row["rank_lower"] = snap.rank_lower[m];
        row["rank_upper"] = snap.rank_upper[m];
        plot.rows.push_back({std::to_string(snap.t),
                             parsed.log.models.id_of(m),
                             format_double(snap.xi[m]),
                             format_double(snap.lo[m]),
                             format_double(snap.hi[m])});
      }
      row["n_battles"] = snap.battles_per_model[m];
      s["models"].push_back(row);
    }
    out["snapshots"].push_back(s);
  }

  OutputStage stage;
  stage.add(args.out, out.dump(2) + "\n");
  stage.add(args.plot_out.empty() ? args.out + ".plot.csv" : args.plot_out,
            plot.to_csv());
  stage.commit(manifest);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pairwise preference ranking toolkit"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command line wins");

  GlobalFlags flags;
  std::uint64_t seed_value = 0;
  auto* seed_opt =
      app.add_option("--seed", seed_value,
                     "master seed; omitted draws from system entropy");
  app.add_option("--threads", flags.threads, "worker threads")
      ->capture_default_str();
  app.add_option("--format", flags.format, "tabular output format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  WinMatrixArgs wm;
  auto* wm_cmd = app.add_subcommand(
      "winmatrix", "estimate the win matrix with CLT intervals");
  wm_cmd->add_option("log", wm.log_path, "battle log (JSON lines)")
      ->required();
  wm_cmd->add_option("--registry", wm.registry_path,
                     "model registry JSON array");
  wm_cmd->add_option("--alpha", wm.alpha, "interval level")
      ->capture_default_str();
  wm_cmd->add_option("--out", wm.out, "output CSV path")->required();

  RankArgs rank;
  auto* rank_cmd =
      app.add_subcommand("rank", "fit scores and an approximate ranking");
  rank_cmd->add_option("log", rank.log_path, "battle log (JSON lines)")
      ->required();
  rank_cmd->add_option("--registry", rank.registry_path,
                       "model registry JSON array");
  rank_cmd->add_option("--alpha", rank.alpha, "interval level")
      ->capture_default_str();
  rank_cmd->add_option("--interval", rank.interval, "interval construction")
      ->check(CLI::IsMember({"sandwich", "bootstrap"}))
      ->capture_default_str();
  rank_cmd->add_option("--multiplicity", rank.multiplicity,
                       "simultaneous correction")
      ->check(CLI::IsMember({"none", "chi2"}))
      ->capture_default_str();
  rank_cmd->add_option("--method", rank.method, "score method")
      ->check(CLI::IsMember({"bt", "npbt"}))
      ->capture_default_str();
  rank_cmd->add_option("--ridge", rank.ridge, "ridge penalty")
      ->capture_default_str();
  rank_cmd->add_option("--boot-reps", rank.boot_reps, "bootstrap replicates")
      ->capture_default_str();
  rank_cmd->add_option("--both-bad", rank.both_bad,
                       "treatment of both_bad votes")
      ->check(CLI::IsMember({"half", "drop"}))
      ->capture_default_str();
  rank_cmd->add_option("--out", rank.out, "leaderboard output path")
      ->required();
  rank_cmd->add_option("--plot-out", rank.plot_out,
                       "interval chart CSV (default <out>.plot.csv)");

  SamplePlanArgs plan;
  auto* plan_cmd = app.add_subcommand(
      "sample-plan", "draw the next pair assignments from the active rule");
  plan_cmd->add_option("log", plan.log_path, "battle log (JSON lines)")
      ->required();
  plan_cmd->add_option("--registry", plan.registry_path,
                       "model registry JSON array");
  plan_cmd->add_option("--k", plan.k, "assignments to draw")
      ->capture_default_str();
  plan_cmd->add_option("--delta", plan.delta, "exploration floor")
      ->capture_default_str();
  plan_cmd->add_option("--out", plan.out, "output path")->required();

  DetectArgs detect;
  auto* detect_cmd =
      app.add_subcommand("detect", "screen voters for anomalous behavior");
  detect_cmd->add_option("log", detect.log_path, "battle log (JSON lines)")
      ->required();
  detect_cmd->add_option("--registry", detect.registry_path,
                         "model registry JSON array");
  detect_cmd->add_option("--key", detect.key, "secret checkpoint key")
      ->required();
  detect_cmd->add_option("--alpha", detect.alpha, "significance level")
      ->capture_default_str();
  detect_cmd->add_flag("--mirrored", detect.mirrored,
                       "also count the low side (h <= vote)");
  detect_cmd->add_option("--out", detect.out, "output path")->required();

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "synthetic experiments");
  sim_cmd->require_subcommand(1);
  auto* cov_cmd = sim_cmd->add_subcommand(
      "coverage", "interval coverage and width on synthetic truth");
  auto* eff_cmd = sim_cmd->add_subcommand(
      "efficiency", "adaptive-vs-uniform sampling width curves");
  for (auto* cmd : {cov_cmd, eff_cmd}) {
    cmd->add_option("--m", sim.m, "number of models")->capture_default_str();
    cmd->add_option("--gamma", sim.gamma, "coefficient shape")
        ->capture_default_str();
    cmd->add_option("--scale", sim.scale, "coefficient scale")
        ->capture_default_str();
    cmd->add_option("--alpha", sim.alpha, "interval level")
        ->capture_default_str();
    cmd->add_option("--ridge", sim.ridge, "ridge penalty")
        ->capture_default_str();
    cmd->add_option("--out", sim.out, "summary JSON path")->required();
    cmd->add_option("--plot-out", sim.plot_out,
                    "plot CSV (default <out>.plot.csv)");
  }
  cov_cmd->add_option("--t", sim.t, "battles per trial")
      ->capture_default_str();
  cov_cmd->add_option("--trials", sim.trials, "trial count")
      ->capture_default_str();
  cov_cmd->add_option("--sampling", sim.sampling, "pair sampling policy")
      ->check(CLI::IsMember({"uniform", "adaptive"}))
      ->capture_default_str();
  cov_cmd->add_flag("--bootstrap", sim.bootstrap,
                    "also run pivot-bootstrap intervals");
  cov_cmd->add_option("--boot-reps", sim.boot_reps, "bootstrap replicates")
      ->capture_default_str();
  eff_cmd
      ->add_option("--checkpoints", sim.checkpoints,
                   "comma-separated prefix sizes (default 2000..20000)")
      ->delimiter(',');
  eff_cmd->add_option("--seeds", sim.seeds, "independent repetitions")
      ->capture_default_str();
  eff_cmd->add_option("--delta", sim.delta, "exploration floor")
      ->capture_default_str();
  eff_cmd->add_option("--target-width", sim.target_width,
                      "precision target for the crossing point")
      ->capture_default_str();

  ReplayArgs rep;
  auto* replay_cmd = app.add_subcommand(
      "replay", "refit scores on growing prefixes of a recorded log");
  replay_cmd->add_option("log", rep.log_path, "battle log (JSON lines)")
      ->required();
  replay_cmd->add_option("--registry", rep.registry_path,
                         "model registry JSON array");
  replay_cmd
      ->add_option("--checkpoints", rep.checkpoints,
                   "comma-separated prefix sizes (default log-spaced)")
      ->delimiter(',');
  replay_cmd->add_option("--alpha", rep.alpha, "interval level")
      ->capture_default_str();
  replay_cmd->add_option("--ridge", rep.ridge, "ridge penalty")
      ->capture_default_str();
  replay_cmd->add_option("--out", rep.out, "snapshots JSON path")->required();
  replay_cmd->add_option("--plot-out", rep.plot_out,
                         "interval chart CSV (default <out>.plot.csv)");

  // global flags may appear after the subcommand name
  for (CLI::App* sub : {wm_cmd, rank_cmd, plan_cmd, detect_cmd, sim_cmd,
                        cov_cmd, eff_cmd, replay_cmd}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 1;
  }
  if (seed_opt->count() > 0) flags.seed = seed_value;
  if (flags.threads == 0) flags.threads = 1;

  try {
    if (wm_cmd->parsed()) return run_winmatrix(wm, flags);
    if (rank_cmd->parsed()) return run_rank(rank, flags);
    if (plan_cmd->parsed()) return run_sample_plan(plan, flags);
    if (detect_cmd->parsed()) return run_detect(detect, flags);
    if (sim_cmd->parsed()) {
      if (cov_cmd->parsed()) return run_simulate_coverage(sim, flags);
      return run_simulate_efficiency(sim, flags);
    }
    if (replay_cmd->parsed()) return run_replay(rep, flags);
  } catch (const NotIdentifiableError& e) {
    std::cerr << "statistical failure: " << e.what() << "\n";
    return 2;
  } catch (const SingularInformationError& e) {
    std::cerr << "statistical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
