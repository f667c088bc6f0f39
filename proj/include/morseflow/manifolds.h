#pragma once

#include <memory>
#include <string>
#include <vector>

#include "morseflow/blocks.h"
#include "morseflow/dynamics.h"

namespace morseflow {

/// A point of the extended phase space in block coordinates.
struct LocalPoint {
  VectorXd y;          // frame coordinates, unstable block first
  HistoryFunction eta;  // ambient memory; empty means zero
};

/// Time-T map of the Dafermos system read in the frame of a block.
class TimeTMap {
 public:
  TimeTMap(const IsolatingBlock& block, std::shared_ptr<const MemoryModel> model, double T,
           bool memory);

  LocalPoint operator()(const LocalPoint& p) const;
  /// Images of tangent vectors (w in frame coordinates, theta ambient).
  std::vector<VariationalState> derivative(const LocalPoint& p,
                                           const std::vector<VariationalState>& dirs,
                                           LocalPoint* image = nullptr) const;

  const IsolatingBlock& block() const { return block_; }
  const MemoryModel& model() const { return *model_; }
  std::shared_ptr<const MemoryModel> model_ptr() const { return model_; }
  double eps() const { return model_->eps(); }
  double T() const { return T_; }
  long steps() const { return steps_; }
  /// Whether the memory variable is part of the stable fiber.
  bool memory() const { return memory_; }
  int u() const { return block_.u(); }
  int s() const { return block_.s(); }

  double eta_norm_sq(const HistoryFunction& eta) const;
  double eta_dot(const HistoryFunction& a, const HistoryFunction& b) const;

 private:
  IsolatingBlock block_;
  std::shared_ptr<const MemoryModel> model_;
  double T_;
  long steps_;
  bool memory_;
};

/// `memory` defaults to whether the coupling kernel is nonzero; without
/// coupling the memory never feeds back into x and is left out of the fiber.
TimeTMap make_time_T_map(const IsolatingBlock& block, std::shared_ptr<const MemoryModel> model,
                         double T, int memory = -1);
TimeTMap make_time_T_map(const IsolatingBlock& block, const Potential& P, const KernelPair& K,
                         double eps, double T, double dt, int memory = -1);

struct TransformConstants {
  double xi = 0, mu = 0, beta = 0, xi1 = 0, mu1 = 0;
  double L = 1.0;
  // m(dfx/dx), |dfx/dy|, |dfy/dx|, |dfy/dy| over the samples.
  double m_xx = 0, n_xy = 0, n_yx = 0, n_yy = 0;
  int samples = 0;
  bool eta_probed = false;  // the memory columns are probe estimates (lower bounds)
  std::vector<std::string> violated() const;
};

/// Samples the derivative of the map on the block; throws BoundsViolated
/// naming the failing inequalities unless `no_throw`.
TransformConstants transform_constants(const TimeTMap& map, double L, int n_samples = 64,
                                       bool no_throw = false);

/// Doubles L (up to 64) and then T (up to 8 T0) until the five bounds hold.
struct PreparedTransform {
  std::shared_ptr<TimeTMap> map;
  TransformConstants constants;
};
PreparedTransform prepare_transform(const IsolatingBlock& block,
                                    std::shared_ptr<const MemoryModel> model, double T0 = 1.0,
                                    double L0 = 1.0, int n_samples = 64);

enum class Orientation { kHorizontal, kVertical };

/// Tensor grid over [-r, r]^dim with cubic Lagrange interpolation.
struct BoxGrid {
  int dim = 0;
  int n = 17;
  double r = 0.0;
  int size() const;
  VectorXd node(int i) const;
  double h() const { return n > 1 ? 2.0 * r / (n - 1) : 0.0; }
  /// (node index, weight) pairs for the interpolant at p.
  std::vector<std::pair<int, double>> weights(const VectorXd& p) const;
  /// Index of the neighbours of node i along axis k, or -1.
  int neighbour(int i, int k, int dir) const;
};

/// Sampled Lipschitz graph. Horizontal: base = unstable coordinates, fiber =
/// (stable coordinates, memory). Vertical: base = stable coordinates x memory
/// probes, fiber = unstable coordinates.
struct DiskFunction {
  Orientation orientation = Orientation::kHorizontal;
  BoxGrid grid;
  int fiber_dim = 0;
  std::vector<VectorXd> values;       // per base node (vertical: node * n_probes + probe)
  std::vector<HistoryFunction> eta;   // horizontal memory fiber (empty without memory)
  std::vector<HistoryFunction> probes;  // vertical: probe set, probes[0] = 0
  double probe_radius = 0.0;
  double lip_estimate = 0.0;
  double L_bound = 1.0;
  // Diagnostics from the fixed point iteration.
  int iterations = 0;
  double final_change = 0.0;
  double max_ratio = 0.0;
  std::vector<double> changes;
  double invariance_defect = 0.0;
  std::vector<VectorXd> preimages;  // horizontal: solved x_bar per node
  double eps = 0.0;

  int n_probes() const { return orientation == Orientation::kVertical ? static_cast<int>(probes.size()) : 1; }
  VectorXd value_at(const VectorXd& base) const;
  HistoryFunction eta_at(const VectorXd& base) const;
  /// Vertical disks: the unstable coordinates above (y_s, eta), with eta
  /// read through its coefficients on the probe directions.
  VectorXd vertical_at(const VectorXd& ys, const HistoryFunction& eta, const TimeTMap& map) const;
};

struct ManifoldOptions {
  int grid = 17;
  double tol = 1e-9;
  int max_iters = 200;
  double L = 1.0;
  std::vector<HistoryFunction> seed_eta;  // optional starting memory fiber
  VectorXd seed_offset;                   // optional starting fiber shift
};

DiskFunction unstable_manifold(const TimeTMap& map, const ManifoldOptions& opt = {});
DiskFunction stable_manifold(const TimeTMap& map, const ManifoldOptions& opt = {});

/// Horizontal disks: per-node derivative of the fiber along the base.
struct SlopeField {
  BoxGrid grid;
  std::vector<MatrixXd> slopes;                     // fiber_dim x base_dim
  std::vector<std::vector<HistoryFunction>> eta_slopes;  // per node, per base axis
  double lip_M = 0.0;
  int iterations = 0;
  double max_ratio = 0.0;
};

SlopeField derivative_field(const TimeTMap& map, const DiskFunction& disk, double tol = 1e-10,
                            int max_iters = 200);

/// max over interior nodes of |slope - centered difference of the disk|.
double slope_fd_mismatch(const TimeTMap& map, const DiskFunction& disk, const SlopeField& field);

/// Distance between two horizontal disks (and slope fields) on the same grid.
double disk_distance(const TimeTMap& map, const DiskFunction& a, const DiskFunction& b);
double slope_distance(const TimeTMap& map, const SlopeField& a, const SlopeField& b);

struct EpsContinuityRow {
  double eps = 0.0;
  double value_distance = 0.0;
  double slope_distance = 0.0;
};
struct EpsContinuityReport {
  std::vector<EpsContinuityRow> rows;
  double value_slope = 0.0;  // log-log fit of distance against eps
  double slope_slope = 0.0;
};

EpsContinuityReport eps_continuity_report(const IsolatingBlock& block,
                                          std::shared_ptr<const MemoryModel> model,
                                          const std::vector<double>& eps_list, double L, double T,
                                          const ManifoldOptions& opt = {});

/// Unit-weighted probe directions for the vertical base: a single-node bump
/// at each end of the grid and a smooth exponential profile, orthonormalized
/// in the weighted norm.
std::vector<HistoryFunction> memory_probes(const MemoryModel& model);

}  // namespace morseflow
