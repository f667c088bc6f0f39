#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "morseflow/flow.h"

namespace morseflow {

struct Trajectory {
  double dt = 0.0;
  double eps = 0.0;
  int eta_stride = 1;
  std::vector<double> times;
  std::vector<VectorXd> x;
  std::vector<VectorXd> xdot;
  std::vector<double> eta_norm_sq;
  std::vector<VectorXd> a_eta;  // int A(s) eta^t(s) ds at every step
  std::vector<double> lyapunov;
  double lyapunov_E = 0.0;
  // Full snapshots at every eta_stride-th step (index i <-> times[i*stride]).
  std::vector<HistoryState> states;
  std::vector<long> state_steps;
  HistoryState initial;
  std::shared_ptr<const MemoryModel> model;
};

struct IntegrateOptions {
  // Full memory snapshots every eta_stride steps; <= 0 keeps only the first
  // and last state.
  int eta_stride = 0;
  // Memory weight in the Lyapunov column; <= 0 selects E0/2.
  double lyapunov_E = 0.0;
  bool check_blowup = true;
  bool check_energy = true;
};

Trajectory integrate(const HistoryState& initial, std::shared_ptr<const MemoryModel> model,
                     double horizon, const IntegrateOptions& opts = {});
Trajectory integrate(const HistoryState& initial, const Potential& P, const KernelPair& kernels,
                     double eps, double horizon, double dt, const IntegrateOptions& opts = {});

struct LyapunovBudget {
  double G1 = 0, G2 = 0, G3 = 0, G4 = 0;
  double E0 = 0;
  /// Largest eps with eps G3 G2/(2 G1) + eps^2 G4 <= E G2/4; +inf when M = 0.
  double eps0(double E) const;
};

LyapunovBudget lyapunov_budget(const Potential& P, const KernelConstants& kc);

/// L_eps = E |eta|^2 - 2F(x) - eps (W x, x) with W the quadrature of int M.
double lyapunov_value(const HistoryState& state, double eps, double E, const Potential& P,
                      const KernelSpec& A, const MatrixXd& M_total);
/// Lower bound E|eta|^2 + (2 gamma - eps int|M|)|x|^2 - 2 delta.
double lyapunov_lower_bound(const HistoryState& state, double eps, double E, const Potential& P,
                            const KernelSpec& A, const KernelConstants& kc);

/// Central-difference residual of d/dt|eta|^2 + C_A|eta|^2 + 2(int A eta, x')
/// at every interior step.
std::vector<double> energy_residual(const Trajectory& traj, double C_A);

/// Tangent flow along `base`, reported at the base snapshot steps.
std::vector<VariationalState> integrate_variational(const Trajectory& base,
                                                    const VariationalState& v0, double eps);

struct Divergence {
  double C_pre = 0.0;
  double C_rate = 0.0;
  std::vector<double> times;
  std::vector<double> measured;
};

/// |x_A - x_B| + |eta_A - eta_B| at the common snapshots with the envelope
/// C_pre exp(C_rate t) (|initial data difference| + |eps1 - eps2|) above it.
Divergence two_solution_divergence(const Trajectory& a, const Trajectory& b, double eps1,
                                   double eps2);

}  // namespace morseflow
