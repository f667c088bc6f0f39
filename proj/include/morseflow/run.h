#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "morseflow/config.h"

namespace morseflow {

inline constexpr const char* kSchemaVersion = "1.0";

/// Command-line overrides of the configuration.
struct RunFlags {
  std::optional<double> eps;
  std::optional<std::vector<double>> eps_list;
  std::optional<int> eq;
  std::optional<std::string> side;  // unstable | stable
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

const std::vector<std::string>& subcommands();

/// Parallel sweeps use at most this many threads (MORSEFLOW_THREADS, default 1).
int thread_cap();

/// Runs one subcommand and writes its files under cfg.out (or flags.out).
/// Returns 0 on success, 1 when a certificate fails (the report is still
/// written) and 2 on input errors. `log` receives a short summary.
int run(const std::string& subcommand, const RunConfig& cfg, const RunFlags& flags,
        std::ostream& log);
/// Loads the configuration (defaults when the path is empty) and runs.
int run(const std::string& subcommand, const std::string& config_path, const RunFlags& flags,
        std::ostream& log, std::ostream& err);

}  // namespace morseflow
