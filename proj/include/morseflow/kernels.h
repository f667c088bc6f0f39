#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace morseflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One term coeff * exp(-rate * s) of an exponential-sum kernel.
struct ExpTerm {
  double rate = 0.0;
  MatrixXd coeff;
};

/// A matrix-valued kernel s -> K(s) on [0, s_max]. `derivative` is required
/// for the weighting kernel A and may be empty for the coupling kernel M.
struct KernelSpec {
  std::string family;
  int dim = 1;
  std::function<MatrixXd(double)> value;
  std::function<MatrixXd(double)> derivative;
  double s_max = 0.0;
  int n_quad = 2;
  // Nonempty iff value(s) == sum_j coeff_j exp(-rate_j s) exactly. The
  // integrator uses this to update memory sums recursively.
  std::vector<ExpTerm> exp_terms;
  bool zero = false;
};

/// Weighting kernel A and coupling kernel M.
struct KernelPair {
  KernelSpec A;
  KernelSpec M;
};

struct KernelConstants {
  double C_A = 0.0;
  double D_A_bar = 0.0;
  double D_A = 0.0;
  double D_M_bar = 0.0;
  double D_M = 0.0;
  double int_norm_A = 0.0;
  double int_norm_M = 0.0;
  MatrixXd M_total;
  int samples = 0;

  /// Decay rate used inside block and cone estimates: the certified C_A
  /// reduced by a 10% safety margin.
  double usable_decay() const { return 0.9 * C_A; }
};

/// A discretized history function on [0, s_max]; column i of `values` is the
/// value at grid[i].
struct HistoryFunction {
  std::vector<double> grid;
  MatrixXd values;
  bool tail_decay_assumed = true;

  int dim() const { return static_cast<int>(values.rows()); }
  int size() const { return static_cast<int>(grid.size()); }

  static HistoryFunction Zero(int dim, int nodes, double h);
  static HistoryFunction Sample(int dim, int nodes, double h,
                                const std::function<VectorXd(double)>& fn);
};

/// Horizon with exp(-rate * s_max) <= 1e-12.
double default_horizon(double rate);

KernelSpec exp_scalar_kernel(int dim, double kappa, double scale = 1.0,
                             double s_max = 0.0);
KernelSpec exp_matrix_kernel(const MatrixXd& coeff, double kappa,
                             double s_max = 0.0);
KernelSpec zero_kernel(int dim, double s_max);
/// Piecewise-linear interpolation of matrix samples; the derivative is the
/// centered difference of the table.
KernelSpec table_kernel(const std::vector<double>& s,
                        const std::vector<MatrixXd>& values);

/// `sample_density` is the number of sample points per unit of s.
KernelConstants certify_kernels(const KernelSpec& A, const KernelSpec& M,
                                int sample_density = 200);

double weighted_norm_sq(const HistoryFunction& eta, const KernelSpec& A);
VectorXd kernel_integral(const KernelSpec& K, const HistoryFunction& eta);

/// Spectral norm of a small dense matrix.
double spectral_norm(const MatrixXd& m);

}  // namespace morseflow
