#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "morseflow/equilibria.h"
#include "morseflow/flow.h"

namespace morseflow {

/// x = x0 + T y with T^{-1} J T in real Jordan-like form.
struct CoordinateFrame {
  MatrixXd T;
  MatrixXd T_inv;
  double kappa = 0.0;
  MatrixXd jordan;
  Dims dims;
  bool eigen_path = true;  // false when the Schur fallback was used
  double cond = 1.0;
};

CoordinateFrame build_frame(const MatrixXd& J, double kappa, double margin = 1e-6);

struct IsolationMargins {
  double entry = std::numeric_limits<double>::infinity();
  double exit = std::numeric_limits<double>::infinity();
  double memory = std::numeric_limits<double>::infinity();
  double cone_det = std::numeric_limits<double>::quiet_NaN();
  // min over boundary samples of the unperturbed normal speed |h_i| (real
  // coordinates) or |h.y|/|y| (pairs).
  double unperturbed_rate = std::numeric_limits<double>::infinity();
  double g_bound = 0.0;          // eps C1 (R + |x0| + r)
  double taylor_remainder = 0.0;  // bound on |T^-1 f(x0+Ty) - J y| over N(2 delta)
  int samples = 0;
  bool certified() const { return entry > 0 && exit > 0 && memory > 0; }
};

struct ConeForm {
  VectorXd Q;  // diagonal: +1 unstable, -1 stable
  double E = 0.0;
  double G = 0.0;
  double L_param = 0.0;
  double Delta = 0.0;
};

struct IsolatingBlock {
  Equilibrium center;
  CoordinateFrame frame;
  double delta = 0.0;
  double R = 0.0;
  double R_eps = 0.0;  // eps used for R
  Dims dims;
  IsolationMargins margins;
  ConeForm cone;

  int u() const { return dims.unstable(); }
  int s() const { return dims.stable(); }
  VectorXd to_local(const VectorXd& x) const { return frame.T_inv * (x - center.point); }
  VectorXd to_global(const VectorXd& y) const { return center.point + frame.T * y; }
  /// y in B_u(scale_u delta) x B_s(scale_s delta).
  bool contains_local(const VectorXd& y, double scale_u = 1.0, double scale_s = 1.0) const;
  bool contains(const VectorXd& x) const { return contains_local(to_local(x)); }
  /// Largest component norm of the unstable / stable part, in units of delta.
  double unstable_size(const VectorXd& y) const;
  double stable_size(const VectorXd& y) const;
};

/// Samples N_kappa(scale delta) (interior, Halton) with the corners added.
std::vector<VectorXd> sample_block(const IsolatingBlock& b, double scale_u, double scale_s,
                                   int n, std::uint64_t seed);

double memory_radius(const IsolatingBlock& b, double eps, const Potential& P,
                     const KernelConstants& kc, int n_samples = 2000);

IsolationMargins verify_isolation(const IsolatingBlock& b, double eps, const Potential& P,
                                  const KernelConstants& kc, int n_boundary_samples = 2000,
                                  std::uint64_t seed = 0);

/// The eps = 0 checks h_i(y) y_i on the same samples (no memory terms).
IsolationMargins unperturbed_isolation_margins(const IsolatingBlock& b, const Potential& P,
                                         int n_boundary_samples = 2000, std::uint64_t seed = 0);

struct ConeCertificate {
  double G = 0.0;
  Eigen::Matrix2d B = Eigen::Matrix2d::Zero();
  bool positive = false;
  double df_norm = 0.0;  // sup |Df^eps(x) T| over the block
  double E_bound = 0.0;  // C_A G/(D_A^2 |Df T|^2)
};

/// G over block samples; throws NoCoercivity if G <= 0.
double coercivity(const IsolatingBlock& b, double eps, const Potential& P,
                  const KernelConstants& kc, int n_samples = 400);

ConeCertificate cone_certificate(const IsolatingBlock& b, double eps, double E, const Potential& P,
                                 const KernelConstants& kc, int n_samples = 400);

struct ConeBudget {
  double L0 = 0.0;
  double Delta = std::numeric_limits<double>::infinity();
  double E = 0.0;
  double E_limit = 0.0;  // C_A G/(100 D_A^2 |Df|^2)
  double E_max = 0.0;    // cone E bound evaluated on this block
  double R_bar = 0.0;
  double G = 0.0;        // uniform over eps in [0, Delta]
  double Q_norm = 1.0;
};

/// E <= 0 selects E_limit. Throws InadmissibleE if E exceeds E_limit.
ConeBudget parameterized_cone_budget(const IsolatingBlock& b, double E, const KernelConstants& kc,
                                     const Potential& P, double Q_scale = 1.0,
                                     int n_samples = 400);

struct ConeDynamicReport {
  double min_derivative = std::numeric_limits<double>::infinity();
  double min_form = std::numeric_limits<double>::infinity();
  int pairs = 0;
  int pairs_left_block = 0;
};

/// Pairs on the cone boundary Q(dy) - E|d eta|^2 + L (eps1-eps2)^2 = 0.
ConeDynamicReport verify_cone_dynamic(const IsolatingBlock& b, std::shared_ptr<const MemoryModel> model,
                                      double eps1, double eps2, double E, double L, int n_pairs,
                                      double t_span, std::uint64_t seed = 0);

struct BlockOptions {
  double kappa = 0.05;
  double delta = 0.0;         // > 0 fixes delta; otherwise 0.2 gap halved
  double delta_fraction = 0.2;
  int max_halvings = 10;
  int n_boundary_samples = 2000;
  std::vector<double> verify_eps = {0.0};
  std::uint64_t seed = 0;
};

/// Builds and certifies the block around `e`; `others` supplies the gap.
/// R is computed for the largest verify eps. A block whose certificate
/// still fails after all halvings is returned with its failing margins.
IsolatingBlock build_block(const Equilibrium& e, const std::vector<Equilibrium>& others,
                           const Potential& P, const KernelConstants& kc,
                           const BlockOptions& opt = {});

}  // namespace morseflow
