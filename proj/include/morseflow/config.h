#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "morseflow/connections.h"

namespace morseflow {

struct KernelConfig {
  std::string family = "exp";  // exp (alias exp_scalar) | zero | table
  double kappa = 1.0;
  double scale = 1.0;
  double s_max = 0.0;  // <= 0: default horizon of the rate
  // table: scalar multiples of the identity at increasing s
  std::vector<double> s, values;
};

/// Flat `section.key = value` configuration. Lists are comma separated,
/// matrix rows separated by ';'.
struct RunConfig {
  std::string potential = "quartic";  // quartic | linear
  int dim = 2;
  double a = 1.0, b = 1.0, c = 0.0;
  MatrixXd matrix;  // linear family
  KernelConfig A{"exp", 1.0, 1.0, 0.0, {}, {}};
  KernelConfig M{"exp", 2.0, 1.0, 0.0, {}, {}};
  double eps = 0.0;
  std::vector<double> eps_list;
  double dt = 0.01;
  double horizon = 10.0;
  std::vector<double> x0;
  int eta_stride = 0;
  // Initial memory: zero, or eta rows sampled at history_s (linear in between,
  // zero past the last node).
  std::string history = "zero";
  std::vector<double> history_s;
  MatrixXd history_eta;
  double box = 0.0;  // <= 0: max(2, dissipativity radius)
  int eq_grid = 11;
  BlockOptions block;
  double manifold_L = 0.0;  // <= 0: chosen by prepare_transform
  double manifold_T = 1.0;
  int manifold_grid = 17;
  double manifold_tol = 1e-9;
  int manifold_max_iters = 200;
  ShootingOptions shooting;
  double matching_radius = 0.0;
  int trajectories = 50;  // lyapunov-report
  std::string out = ".";
  std::uint64_t seed = 0;
};

/// Throws Error(kConfigError) naming the source, line and field.
RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);
/// Applies one `key = value` assignment (used by the parser and for overrides).
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Cross-field checks; throws Error(kConfigError).
void validate_config(const RunConfig& cfg);

std::vector<double> parse_list(const std::string& text);

Potential make_potential(const RunConfig& cfg);
KernelPair make_kernels(const RunConfig& cfg);
HistoryState make_initial_state(const RunConfig& cfg, const MemoryModel& model);
GraphOptions make_graph_options(const RunConfig& cfg);

}  // namespace morseflow
