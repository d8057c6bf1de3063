#pragma once

// Battle-log serialization. The on-disk format is UTF-8 JSON lines:
//   {"ts": "...", "model_a": "x", "model_b": "y",
//    "winner": "model_a"|"model_b"|"tie"|"both_bad",
//    "p": 0.25, "user": "u123"}
// ts, p and user are optional. A model registry file is a JSON array of id
// strings whose order defines the dense indices (index 0 = anchor).

#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairrank/core.hpp"

namespace pairrank {

enum class BothBadPolicy {
  kHalf,  // count "both_bad" as a 0.5 outcome, like a tie
  kDrop,  // exclude "both_bad" votes from the log
};

struct ParseOptions {
  // Registry with preassigned indices; empty means open registry built in
  // order of first appearance.
  ModelRegistry registry;
  BothBadPolicy both_bad = BothBadPolicy::kHalf;
};

struct ParsedLog {
  BattleLog log;
  std::vector<std::string> warnings;
};

namespace detail {

inline Outcome outcome_from_winner(const std::string& winner,
                                   BothBadPolicy policy, bool* drop) {
  *drop = false;
  if (winner == "model_a") return 0.0;
  if (winner == "model_b") return 1.0;
  if (winner == "tie") return 0.5;
  if (winner == "both_bad") {
    if (policy == BothBadPolicy::kDrop) *drop = true;
    return 0.5;
  }
  throw ParseError("unknown winner value '" + winner + "'");
}

}  // namespace detail

inline ParsedLog parse_log(std::istream& in, ParseOptions opts = {}) {
  ParsedLog out;
  out.log.models = std::move(opts.registry);

  struct Pending {
    int a;
    int b;
    Outcome outcome;
    double prob;  // <= 0 marks "not supplied"
    std::string voter;
    std::optional<std::string> ts;
  };
  std::vector<Pending> pending;

  std::string line;
  std::int64_t line_no = 0;
  std::int64_t defaulted_probs = 0;
  std::int64_t dropped_both_bad = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": malformed JSON: " + e.what());
    }
    try {
      if (!j.contains("model_a") || !j.contains("model_b") ||
          !j.contains("winner")) {
        throw ParseError("missing required field (model_a, model_b, winner)");
      }
      const std::string id_a = j.at("model_a").get<std::string>();
      const std::string id_b = j.at("model_b").get<std::string>();
      bool drop = false;
      const Outcome h = detail::outcome_from_winner(
          j.at("winner").get<std::string>(), opts.both_bad, &drop);
      if (drop) {
        ++dropped_both_bad;
        continue;
      }
      double p = -1.0;
      if (j.contains("p") && !j.at("p").is_null()) {
        p = j.at("p").get<double>();
        if (!(p > 0.0) || p > 1.0) {
          throw ValidationError("sample probability must lie in (0,1], got " +
                                std::to_string(p));
        }
      } else {
        ++defaulted_probs;
      }
      Pending rec;
      rec.a = out.log.models.add(id_a);
      rec.b = out.log.models.add(id_b);
      if (rec.a == rec.b) {
        throw ValidationError("model_a and model_b are the same model");
      }
      rec.outcome = h;
      rec.prob = p;
      if (j.contains("user") && !j.at("user").is_null()) {
        rec.voter = j.at("user").get<std::string>();
      }
      if (j.contains("ts") && !j.at("ts").is_null()) {
        rec.ts = j.at("ts").get<std::string>();
      }
      pending.push_back(std::move(rec));
    } catch (const ParseError&) {
      throw;
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " +
                            e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }

  // Legacy records without a recorded serving probability default to the
  // uniform rate over all pairs of the final registry, so inverse weighting
  // degenerates to plain reweighting.
  const int m = out.log.models.size();
  const double default_p =
      (m >= 2) ? 1.0 / static_cast<double>(pair_count(m)) : 1.0;
  std::int64_t t = 0;
  out.log.records.reserve(pending.size());
  for (auto& rec : pending) {
    auto [pair, h] = canonicalize_pair(rec.a, rec.b, rec.outcome);
    BattleRecord r;
    r.time_index = t++;
    r.pair = pair;
    r.outcome = h;
    r.sample_prob = rec.prob > 0.0 ? rec.prob : default_p;
    r.voter_key = std::move(rec.voter);
    r.timestamp = std::move(rec.ts);
    out.log.records.push_back(std::move(r));
  }
  if (defaulted_probs > 0) {
    std::ostringstream msg;
    msg << defaulted_probs << " record(s) had no sampling probability; "
        << "defaulted to uniform 1/" << (m >= 2 ? pair_count(m) : 1);
    out.warnings.push_back(msg.str());
  }
  if (dropped_both_bad > 0) {
    out.warnings.push_back(std::to_string(dropped_both_bad) +
                           " both_bad vote(s) dropped by policy");
  }
  return out;
}

inline ParsedLog parse_log(const std::string& text, ParseOptions opts = {}) {
  std::istringstream in(text);
  return parse_log(in, std::move(opts));
}

// Writes records back as JSON lines. Canonical orientation is preserved, so
// model_a is always the lower-index model of each stored pair.
inline void serialize_log(const BattleLog& log, std::ostream& out) {
  for (const auto& r : log.records) {
    nlohmann::json j;
    if (r.timestamp) j["ts"] = *r.timestamp;
    j["model_a"] = log.models.id_of(r.pair.first);
    j["model_b"] = log.models.id_of(r.pair.second);
    if (r.outcome == 0.0) {
      j["winner"] = "model_a";
    } else if (r.outcome == 1.0) {
      j["winner"] = "model_b";
    } else {
      j["winner"] = "tie";
    }
    j["p"] = r.sample_prob;
    if (!r.voter_key.empty()) j["user"] = r.voter_key;
    out << j.dump() << '\n';
  }
}

inline ModelRegistry load_registry(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("registry: malformed JSON: ") + e.what());
  }
  if (!j.is_array()) throw SchemaError("registry must be a JSON array of ids");
  std::vector<std::string> ids;
  for (const auto& v : j) ids.push_back(v.get<std::string>());
  return ModelRegistry(ids);
}

}  // namespace pairrank
