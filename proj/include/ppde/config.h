#ifndef PPDE_CONFIG_H
#define PPDE_CONFIG_H

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ppde/nrde.h"
#include "ppde/problems.h"
#include "ppde/train.h"

namespace ppde {

// Bad or missing configuration. key() names the offending dotted key when
// there is one.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string key = {})
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// `key = value` lines grouped under `[section]` headers; keys come back as
// "section.key". Blank lines and `#` comments are ignored.
std::map<std::string, std::string> parse_key_values(const std::string& text);

struct EvalSettings {
  int n_test = 50;
  int n_batches = 10;
  int oracle_sims = 2000;
  int trace_paths = 5;
  std::uint64_t seed = 0;
  std::string cache;  // oracle cache CSV, empty disables
};

struct OracleSettings {
  int node = 0;
  int n_sims = 2000;
  std::string prefix;        // CSV path file; empty uses a simulated path
  std::uint64_t path_seed = 0;
};

struct ExperimentConfig {
  std::string kind;  // heat, bs_lookback, heston_autocall
  ProblemSpec problem;
  NrdeConfig model;
  std::uint64_t init_seed = 0;
  TrainConfig train;
  EvalSettings eval;
  OracleSettings oracle;
  int simulate_paths = 8;
  int logsig_depth = 2;
  std::string logsig_input;
  std::string out_dir = "out";
  int threads = 0;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// One seed drives model initialization, training batches, evaluation
// batches and the oracle path.
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

nlohmann::ordered_json config_to_json(const ExperimentConfig& config);
// Hex FNV-1a of the resolved JSON without output location or thread count.
std::string config_hash(const ExperimentConfig& config);

}  // namespace ppde

#endif  // PPDE_CONFIG_H
