#pragma once

// Active pair selection. Each round is served from the distribution
//   P(a) = (1 - delta) * w(a) / sum w  +  delta / |A|,
// where the raw weight is the expected one-sample shrink of pair a's
// confidence interval,
//   w(a) = sqrt(Sigma_aa / n_a) - sqrt(Sigma_aa / (n_a + 1)),
// computed from the streamed IPW variance diagonal. The uniform floor keeps
// every pair's probability at least delta/|A|, which is the positivity the
// CLT for the reweighted estimates needs.
//
// Until every pair has been observed warmup_target times, rounds are served
// uniformly: the weight rule is undefined at n = 0 and degenerate at n = 1,
// and any schedule that singles out a target pair leaves near-floor
// probabilities on the rest, whose records would then carry inverse weights
// up to |A|/delta and wreck the variance estimates. Uniform warm-up caps
// every weight at |A|.

#include <cmath>
#include <cstdint>
#include <vector>

#include "pairrank/core.hpp"
#include "pairrank/rng.hpp"
#include "pairrank/win_matrix.hpp"

namespace pairrank {

struct DrawResult {
  PairKey pair;
  double probability = 0.0;  // exact serving probability this round
};

class SamplerState {
 public:
  SamplerState(int num_models, double floor_delta, std::uint64_t seed,
               std::int64_t warmup_target = 2)
      : num_models_(num_models),
        floor_delta_(floor_delta),
        warmup_target_(warmup_target),
        stats_(num_models),
        rng_(seed) {
    if (num_models < 2) throw ValidationError("sampler needs >= 2 models");
    if (!(floor_delta >= 0.0 && floor_delta <= 1.0)) {
      throw ValidationError("exploration floor must lie in [0,1]");
    }
  }

  int num_models() const { return num_models_; }
  std::int64_t total() const { return stats_.total; }
  std::int64_t n_obs(int flat) const { return stats_.n_obs[flat]; }

  double sigma_diag(int flat) const {
    if (stats_.total == 0) return 0.0;
    const double t = static_cast<double>(stats_.total);
    const double mean = stats_.sum_x[flat] / t;
    const double v = stats_.sum_x2[flat] / t - mean * mean;
    return v > 0.0 ? v : 0.0;
  }

  bool in_warmup() const {
    for (std::int64_t n : stats_.n_obs) {
      if (n < warmup_target_) return true;
    }
    return false;
  }

  // The adaptive rule's distribution over flat pair indices. Pairs never
  // observed carry zero raw weight; if every weight vanishes the
  // distribution is uniform.
  std::vector<double> pair_probabilities() const {
    const std::size_t n_pairs = stats_.n_obs.size();
    std::vector<double> weights(n_pairs, 0.0);
    double total_weight = 0.0;
    for (std::size_t flat = 0; flat < n_pairs; ++flat) {
      const std::int64_t n = stats_.n_obs[flat];
      if (n <= 0) continue;
      const double sigma = sigma_diag(static_cast<int>(flat));
      const double w = std::sqrt(sigma / static_cast<double>(n)) -
                       std::sqrt(sigma / static_cast<double>(n + 1));
      weights[flat] = w;
      total_weight += w;
    }
    std::vector<double> probs(n_pairs);
    const double uniform = 1.0 / static_cast<double>(n_pairs);
    if (total_weight <= 0.0) {
      for (auto& p : probs) p = uniform;
      return probs;
    }
    for (std::size_t flat = 0; flat < n_pairs; ++flat) {
      probs[flat] = (1.0 - floor_delta_) * weights[flat] / total_weight +
                    floor_delta_ * uniform;
    }
    return probs;
  }

  // Distribution actually served this round: uniform during warm-up,
  // adaptive rule afterwards. Uniform trivially satisfies the floor.
  std::vector<double> round_probabilities() const {
    if (!in_warmup()) return pair_probabilities();
    const std::size_t n_pairs = stats_.n_obs.size();
    return std::vector<double>(n_pairs, 1.0 / static_cast<double>(n_pairs));
  }

  DrawResult draw() {
    const std::vector<double> probs = round_probabilities();
    const std::size_t flat = rng_.categorical(probs);
    DrawResult out;
    out.pair = pair_from_flat(static_cast<int>(flat));
    out.probability = probs[flat];
    return out;
  }

  // Streams the record into the variance diagonal; equals the batch
  // win-matrix statistics on the same prefix by construction.
  void update(const BattleRecord& record) { stats_.add(record); }

  PairKey pair_from_flat(int flat) const {
    int i = 0;
    int remaining = flat;
    for (; i < num_models_ - 1; ++i) {
      const int row = num_models_ - 1 - i;
      if (remaining < row) break;
      remaining -= row;
    }
    return PairKey{i, i + 1 + remaining};
  }

 private:
  int num_models_;
  double floor_delta_;
  std::int64_t warmup_target_;
  WinMatrixAccumulator stats_;
  Rng rng_;
};

}  // namespace pairrank
