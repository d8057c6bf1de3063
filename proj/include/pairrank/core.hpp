#pragma once

// Domain types shared by every estimator: the model registry, canonical
// comparison pairs, and the battle log.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pairrank {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotIdentifiableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularInformationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense-index registry of model identifiers. Index 0 is the anchor model
// whose score is pinned to zero.
class ModelRegistry {
 public:
  ModelRegistry() = default;

  // Closed registry from an explicit ordered id list.
  explicit ModelRegistry(const std::vector<std::string>& ids) {
    for (const auto& id : ids) add(id);
    closed_ = true;
  }

  int add(const std::string& id) {
    auto it = index_.find(id);
    if (it != index_.end()) return it->second;
    if (closed_) {
      throw SchemaError("unknown model id '" + id + "' (closed registry)");
    }
    const int idx = static_cast<int>(ids_.size());
    index_.emplace(id, idx);
    ids_.push_back(id);
    return idx;
  }

  int index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw SchemaError("unknown model id '" + id + "'");
    }
    return it->second;
  }

  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  const std::string& id_of(int index) const { return ids_.at(index); }
  int size() const { return static_cast<int>(ids_.size()); }
  bool closed() const { return closed_; }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::map<std::string, int> index_;
  std::vector<std::string> ids_;
  bool closed_ = false;
};

// Unordered comparison pair in canonical orientation (first < second).
struct PairKey {
  int first = 0;
  int second = 0;

  friend bool operator==(const PairKey&, const PairKey&) = default;
  friend auto operator<=>(const PairKey&, const PairKey&) = default;
};

inline int pair_count(int num_models) {
  return num_models * (num_models - 1) / 2;
}

// Flat index of a canonical pair in the enumeration (0,1),(0,2),...,(M-2,M-1)
// ordered lexicographically.
inline int pair_flat_index(const PairKey& p, int num_models) {
  const int i = p.first;
  const int j = p.second;
  return i * num_models - i * (i + 1) / 2 + (j - i - 1);
}

inline std::vector<PairKey> all_pairs(int num_models) {
  std::vector<PairKey> out;
  out.reserve(pair_count(num_models));
  for (int i = 0; i < num_models; ++i) {
    for (int j = i + 1; j < num_models; ++j) out.push_back({i, j});
  }
  return out;
}

// Preference outcome in [0,1]; 1 means the second model of the canonical
// pair was preferred, 0.5 is a tie.
using Outcome = double;

inline void validate_outcome(Outcome h) {
  if (!(h >= 0.0 && h <= 1.0)) {
    throw ValidationError("outcome must lie in [0,1]");
  }
}

// Reorient an observed (a, b, outcome) triple so the stored pair satisfies
// first < second; flipping the pair flips the outcome.
inline std::pair<PairKey, Outcome> canonicalize_pair(int a, int b, Outcome h) {
  if (a == b) {
    throw ValidationError("a model cannot battle itself (index " +
                          std::to_string(a) + ")");
  }
  validate_outcome(h);
  if (a < b) return {PairKey{a, b}, h};
  return {PairKey{b, a}, 1.0 - h};
}

struct BattleRecord {
  std::int64_t time_index = 0;
  PairKey pair;
  Outcome outcome = 0.5;
  double sample_prob = 1.0;  // probability the pair was served this round
  std::string voter_key;
  std::optional<std::string> timestamp;
};

struct BattleLog {
  ModelRegistry models;
  std::vector<BattleRecord> records;

  std::int64_t size() const {
    return static_cast<std::int64_t>(records.size());
  }
};

}  // namespace pairrank
