#pragma once

// Sequential detection of anomalous voters.
//
// Each vote is scored against the crowd's history on the same pair with the
// rank p-value
//   p = (1 + #{h in pool : h >= H'}) / (|pool| + 1),
// which is super-uniform whenever the vote is exchangeable with the pool.
// Per voter, Fisher's combination statistic M_j = -2 sum_{i<=j} log p_i is
// compared against chi2_{2j, 1 - alpha/5} at five checkpoint indices j drawn
// from {1..100} by a keyed hash of the voter, so checkpoints are
// unpredictable to voters yet reproducible given the key.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pairrank/core.hpp"
#include "pairrank/math.hpp"
#include "pairrank/rng.hpp"

namespace pairrank {

// Multiset of historical outcomes per pair, with counting queries.
class HistoryPool {
 public:
  void add(const PairKey& pair, Outcome h) {
    auto& bucket = pools_[pair];
    bucket.counts[h] += 1;
    bucket.size += 1;
  }

  std::int64_t size(const PairKey& pair) const {
    auto it = pools_.find(pair);
    return it == pools_.end() ? 0 : it->second.size;
  }

  std::int64_t count_geq(const PairKey& pair, Outcome h) const {
    auto it = pools_.find(pair);
    if (it == pools_.end()) return 0;
    std::int64_t c = 0;
    for (auto v = it->second.counts.lower_bound(h);
         v != it->second.counts.end(); ++v) {
      c += v->second;
    }
    return c;
  }

  std::int64_t count_leq(const PairKey& pair, Outcome h) const {
    auto it = pools_.find(pair);
    if (it == pools_.end()) return 0;
    std::int64_t c = 0;
    for (auto v = it->second.counts.begin();
         v != it->second.counts.end() && v->first <= h; ++v) {
      c += v->second;
    }
    return c;
  }

 private:
  struct Bucket {
    std::map<Outcome, std::int64_t> counts;
    std::int64_t size = 0;
  };
  std::map<PairKey, Bucket> pools_;
};

// One-sided exchangeability p-value of a new vote against the pool. The
// mirrored variant counts the low side (h <= outcome) instead.
inline double exchangeability_pvalue(const HistoryPool& pool,
                                     const PairKey& pair, Outcome outcome,
                                     bool mirrored = false) {
  const std::int64_t n = pool.size(pair);
  const std::int64_t geq = mirrored ? pool.count_leq(pair, outcome)
                                    : pool.count_geq(pair, outcome);
  return static_cast<double>(1 + geq) / static_cast<double>(n + 1);
}

inline double fisher_statistic(const std::vector<double>& p_values) {
  double m = 0.0;
  for (double p : p_values) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw ValidationError("Fisher combination needs p-values in (0,1]");
    }
    m += std::log(p);
  }
  return -2.0 * m;
}

inline constexpr int kCheckpointCount = 5;
inline constexpr int kCheckpointHorizon = 100;

// Five distinct checkpoint indices in [1, 100], fixed per voter by the
// secret key before any evaluation.
inline std::vector<int> voter_checkpoints(std::string_view secret_key,
                                          std::string_view voter_key) {
  Rng rng(derive_seed(fnv1a64(secret_key), voter_key));
  return rng.sample_distinct(kCheckpointCount, 1, kCheckpointHorizon);
}

enum class Verdict { kPending, kNormal, kAnomalous };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kPending: return "pending";
    case Verdict::kNormal: return "normal";
    case Verdict::kAnomalous: return "anomalous";
  }
  return "?";
}

struct VoterLedger {
  std::string voter_key;
  std::vector<int> checkpoints;  // sorted, distinct
  double alpha = 0.1;
  std::vector<double> p_values;
  std::map<int, double> fisher_stats;  // checkpoint j -> M_j
  Verdict verdict = Verdict::kPending;
  double max_fisher = 0.0;         // largest M_j over evaluated checkpoints
  int first_firing_checkpoint = 0;  // 0 when none fired
};

// Applies the checkpointed Fisher test to a ledger's p-value sequence.
// Anomalous as soon as any reached checkpoint j has M_j >= chi2_{2j,1-a/5};
// normal once every checkpoint was reached without firing; pending
// otherwise.
inline Verdict evaluate_voter(VoterLedger& ledger) {
  double log_sum = 0.0;
  std::size_t next = 0;
  ledger.fisher_stats.clear();
  ledger.max_fisher = 0.0;
  ledger.first_firing_checkpoint = 0;
  for (std::size_t i = 0;
       i < ledger.p_values.size() && next < ledger.checkpoints.size(); ++i) {
    const double p = ledger.p_values[i];
    if (!(p > 0.0 && p <= 1.0)) {
      throw ValidationError("ledger contains a p-value outside (0,1]");
    }
    log_sum += std::log(p);
    const int j = static_cast<int>(i) + 1;
    if (j == ledger.checkpoints[next]) {
      const double m_j = -2.0 * log_sum;
      ledger.fisher_stats[j] = m_j;
      ledger.max_fisher = std::max(ledger.max_fisher, m_j);
      const double threshold =
          chi2_quantile(1.0 - ledger.alpha / kCheckpointCount, 2.0 * j);
      if (m_j >= threshold && ledger.first_firing_checkpoint == 0) {
        ledger.first_firing_checkpoint = j;
      }
      ++next;
    }
  }
  if (ledger.first_firing_checkpoint > 0) {
    ledger.verdict = Verdict::kAnomalous;
  } else if (next == ledger.checkpoints.size()) {
    ledger.verdict = Verdict::kNormal;
  } else {
    ledger.verdict = Verdict::kPending;
  }
  return ledger.verdict;
}

struct DetectOptions {
  std::string secret_key;
  double alpha = 0.1;
  bool mirrored = false;
};

// Chronological replay of a battle log. Every vote's p-value is computed
// against the pool as of its arrival, excluding the voter's own earlier
// votes; the vote then joins the pool. Records without a voter key feed the
// pool but are not scored.
inline std::vector<VoterLedger> detect_anomalies(const BattleLog& log,
                                                 const DetectOptions& opts) {
  HistoryPool crowd;
  std::map<std::string, HistoryPool> own;
  std::map<std::string, VoterLedger> ledgers;

  for (const auto& r : log.records) {
    if (!r.voter_key.empty()) {
      auto [it, fresh] = ledgers.try_emplace(r.voter_key);
      VoterLedger& ledger = it->second;
      if (fresh) {
        ledger.voter_key = r.voter_key;
        ledger.alpha = opts.alpha;
        ledger.checkpoints = voter_checkpoints(opts.secret_key, r.voter_key);
      }
      HistoryPool& mine = own[r.voter_key];
      const std::int64_t n = crowd.size(r.pair) - mine.size(r.pair);
      const std::int64_t side =
          opts.mirrored
              ? crowd.count_leq(r.pair, r.outcome) -
                    mine.count_leq(r.pair, r.outcome)
              : crowd.count_geq(r.pair, r.outcome) -
                    mine.count_geq(r.pair, r.outcome);
      ledger.p_values.push_back(static_cast<double>(1 + side) /
                                static_cast<double>(n + 1));
      mine.add(r.pair, r.outcome);
    }
    crowd.add(r.pair, r.outcome);
  }

  std::vector<VoterLedger> out;
  out.reserve(ledgers.size());
  for (auto& [key, ledger] : ledgers) {
    evaluate_voter(ledger);
    out.push_back(std::move(ledger));
  }
  return out;
}

}  // namespace pairrank
