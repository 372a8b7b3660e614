#pragma once

// Experiment configuration shared by the altune subcommands. A JSON file
// supplies values, command-line flags override them.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "altune/dataset.hpp"
#include "altune/engine.hpp"
#include "altune/tapt.hpp"

namespace altune::cli {

/// Bad flags or configuration values; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string data;
  std::optional<DataFormat> format;
  std::vector<std::string> class_names;
  std::optional<SynthConfig> synth;  // used when `data` is empty

  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // empty means {seed}
  std::string out;
  std::size_t jobs = 1;
  bool wallclock = false;

  bool tapt_enabled = true;
  TaptConfig tapt;
  ALConfig al;
  SplitSpec split;
  std::string encoder_path;

  std::vector<double> sweep_budgets{0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::string> sweep_strategies{"entropy"};
  bool sweep_baseline = true;
  std::vector<double> ablate_budgets{0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0};

  std::vector<std::uint64_t> seed_list() const;
  /// Throws UsageError on the first invalid value.
  void validate() const;
};

/// Reads a JSON config file; unknown keys are rejected.
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});
ExperimentConfig config_from_json(const std::string& text, ExperimentConfig base = {});
/// JSON echo of every field, used in manifests.
std::string config_to_json(const ExperimentConfig& config);

/// "1..10", "1,2,5" or a mix such as "1..3,7".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);
std::vector<std::string> parse_name_list(const std::string& text);

}  // namespace altune::cli
