#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "morseflow/kernels.h"
#include "morseflow/potential.h"

namespace morseflow {

/// The Dafermos pair (eta, x) at time t. `eta` lives on the model's step
/// grid s_k = k dt; an empty eta means the zero history.
struct HistoryState {
  VectorXd x;
  HistoryFunction eta;
  double t = 0.0;
};

/// Tangent pair (theta, w) of the variational system.
struct VariationalState {
  VectorXd w;
  HistoryFunction theta;
};

/// Kernel tables sampled on the step grid, shared by all runs that use the
/// same (P, kernels, dt).
struct KernelTables {
  double dt = 0.0;
  int dim = 0;
  int a_nodes = 0;
  int m_nodes = 0;
  int nodes = 0;
  bool a_scalar = false;
  bool m_scalar = false;
  bool m_zero = false;
  std::vector<MatrixXd> A;
  std::vector<MatrixXd> dA;
  std::vector<MatrixXd> M;
  std::vector<double> a_scale;  // A_k = a_scale_k I when a_scalar
  std::vector<double> m_scale;  // M_k = m_scale_k I when m_scalar
  std::vector<double> wa;       // trapezoid weights on [0, s_max(A)]
  std::vector<double> wm;       // trapezoid weights on [0, s_max(M)]
  MatrixXd coupling_total;      // sum_k wm_k M_k
  std::vector<ExpTerm> m_terms;
};

/// Potential, kernels and eps discretized on a fixed step dt.
class MemoryModel {
 public:
  MemoryModel(Potential P, KernelPair kernels, double eps, double dt,
              int sample_density = 200);

  /// Same tables and constants with a different eps.
  std::shared_ptr<MemoryModel> with_eps(double eps) const;

  const Potential& potential() const { return P_; }
  const KernelPair& kernels() const { return K_; }
  const KernelConstants& constants() const { return *kc_; }
  const KernelTables& tables() const { return *tab_; }
  double eps() const { return eps_; }
  double dt() const { return tab_->dt; }
  int dim() const { return P_.dim; }
  int nodes() const { return tab_->nodes; }

  /// f^eps(x) = f(x) + eps W x, with W the step-grid quadrature of int M.
  VectorXd field(const VectorXd& x) const;
  MatrixXd field_jacobian(const VectorXd& x) const;

  HistoryState rest_state(const VectorXd& x) const;
  HistoryFunction zero_history() const;

  /// Weighted norm |eta|^2 by the step-grid trapezoid rule over [0, s_max(A)].
  double norm_sq(const HistoryFunction& eta) const;

 private:
  MemoryModel() = default;

  Potential P_;
  KernelPair K_;
  double eps_ = 0.0;
  std::shared_ptr<const KernelConstants> kc_;
  std::shared_ptr<const KernelTables> tab_;
};

/// Fixed-step RK4 by the method of steps on z = (x, w_1, ..., w_k): the
/// base point and optional tangent vectors, each with its own history. The
/// past is kept in a ring buffer on the step grid; off-grid stage values
/// come from cubic Hermite interpolation (4-point Lagrange on the initial
/// history, which carries no derivative).
class DelayIntegrator {
 public:
  DelayIntegrator(const MemoryModel& model, const HistoryState& initial,
                  const std::vector<VariationalState>& tangents = {});

  void step();
  void advance(long steps);

  long step_index() const { return n_; }
  double time() const { return t0_ + n_ * h_; }
  int blocks() const { return blocks_; }

  VectorXd value(int block = 0) const;
  /// Right-hand side at the current node.
  VectorXd derivative(int block = 0) const;

  HistoryFunction eta(int block = 0) const;
  double eta_norm_sq(int block = 0) const;
  /// |eta|^2 and int A eta in one pass; either output may be null.
  void a_moments(int block, double* norm_sq, VectorXd* a_eta) const;
  /// Weighted norm of the difference of two memory states on the same grid.
  double eta_distance_sq(const DelayIntegrator& other, int block = 0,
                         int other_block = 0) const;
  VectorXd a_eta_integral(int block = 0) const;
  VectorXd m_eta_integral(int block = 0) const;
  /// int (A'(s) eta(s), eta(s)) ds on the step grid.
  double da_eta_form(int block = 0) const;

  HistoryState state() const;
  VariationalState tangent(int j) const;

  /// Switches to the direct O(nodes) memory sums even for exponential
  /// kernels (used to cross-check the recursive path).
  static void force_direct_sums(bool on);

 private:
  int slot(long n) const;
  VectorXd node(long n) const { return nodes_.col(slot(n)); }
  void rhs(const VectorXd& z, const VectorXd& mem, VectorXd& out) const;
  void direct_node_sum(long newest, VectorXd& out) const;
  void direct_mid_sum(long newest, VectorXd& out) const;
  void apply_terms(const std::vector<VectorXd>& sums, long tail_node, bool mids,
                   VectorXd& out) const;
  void init_history(const HistoryState& initial, const std::vector<VariationalState>& tangents);
  double history_form(int block, const std::vector<MatrixXd>& tab, const VectorXd* scale_rev,
                      const DelayIntegrator* other, int other_block) const;
  template <typename Fn>
  void for_history(int count, Fn&& fn) const;

  const MemoryModel& model_;
  const KernelTables& tab_;
  int d_ = 0;
  int blocks_ = 1;
  int m_ = 0;
  double h_ = 0.0;
  double eps_ = 0.0;
  double t0_ = 0.0;
  long n_ = 0;
  int cap_ = 0;
  int K_ = 0;  // M-kernel nodes minus one
  bool use_memory_ = false;
  bool fast_ = false;

  MatrixXd nodes_;
  MatrixXd derivs_;
  MatrixXd mids_;
  std::vector<char> has_deriv_;
  VectorXd hist_sum_;  // H over nodes n-1..n-K, valid at node n
  bool hist_valid_ = false;
  std::vector<VectorXd> P_;  // per exp term: sum_{k=1}^K q^k z_{n-k}
  std::vector<VectorXd> V_;  // per exp term: sum_{k=1}^K q^k mid_{n-k}
  std::vector<double> q_;
  std::vector<double> qK_;
  VectorXd wm_rev_;  // scalar kernel weights for nodes n-K..n-1
  VectorXd wa_rev_;  // same for A, over nodes n-Ka..n-1
  VectorXd wda_rev_;
  VectorXd z_;
};

}  // namespace morseflow
