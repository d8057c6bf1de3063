#pragma once

// Run manifests and atomic output files. Every file the CLI writes goes
// through write_atomic (temp file + rename, no partial outputs), and every
// output gets a sibling <name>.manifest.json recording the subcommand, the
// fully resolved configuration, digests of the inputs, and the seed, so a
// result can be traced back to exactly what produced it.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairrank/rng.hpp"

namespace pairrank {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct RunManifest {
  std::string subcommand;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json input_digests = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["artifact_version"] = kArtifactVersion;
    j["subcommand"] = subcommand;
    j["config"] = config;
    j["input_digests"] = input_digests;
    j["seed"] = seed;
    j["outputs"] = outputs;
    j["warnings"] = warnings;
    return j;
  }
};

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();
  char hex[32];
  std::snprintf(hex, sizeof(hex), "fnv1a64:%016llx",
                static_cast<unsigned long long>(fnv1a64(content)));
  return hex;
}

inline void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write to " + tmp);
    out << content;
    if (!out.good()) throw std::runtime_error("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

inline void write_manifest(const RunManifest& manifest,
                           const std::string& primary_output) {
  write_atomic(primary_output + ".manifest.json",
               manifest.to_json().dump(2) + "\n");
}

}  // namespace pairrank
