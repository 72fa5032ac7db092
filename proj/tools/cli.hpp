#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccverify/model.hpp"

namespace ccv::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kSafe = 0, kUnsafe = 1, kGap = 2, kError = 3 };

/// Bad flags, files or overrides. Reported on stderr with exit code 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string subcommand;

  std::optional<fs::path> model;
  std::optional<fs::path> instance;
  std::size_t instance_index = 0;

  // Inline instance, used when no instance file is given.
  std::optional<std::vector<double>> x0;
  std::optional<double> delta;
  std::string norm = "inf";
  std::optional<int> label;
  std::optional<int> target;

  std::optional<fs::path> output;
  std::uint64_t seed = 0;
  double timeout_s = 600.0;

  std::optional<double> epsilon;
  std::optional<double> lambda;
  std::optional<int> tau_max;
  std::optional<double> eps_comp;
  std::optional<int> t_max;
  bool auto_tau = false;

  // upper
  std::optional<fs::path> dump_problem;

  // oracle / bench
  int pattern_cap = 20;
  std::vector<fs::path> bench_inputs;
  std::optional<fs::path> history_csv;
  int workers = 1;

  // gen-toy
  std::string toy_kind = "two-neuron";
  std::vector<int> widths{2, 8, 8, 2};
  int count = 1;
  std::optional<fs::path> model_out;
  std::optional<fs::path> instance_out;

  /// Checks flag-level invariants; throws ConfigError.
  void validate() const;
};

/// Default timeout: $CCVERIFY_TIMEOUT when set and positive, else 600 s.
double default_timeout();

/// Loads the model and instance named by the config and applies the
/// overrides; the result is validated before it is returned.
VerificationInstance load_instance(const RunConfig& config, std::ostream& err);

/// Rounds every floating-point number to 9 significant digits.
nlohmann::json rounded(const nlohmann::json& doc);
std::string format_number(double value);

int cmd_verify(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_bounds(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_upper(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_oracle(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_bench(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_gen_toy(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Dispatches on config.subcommand, mapping exceptions to exit code 3.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace ccv::cli
