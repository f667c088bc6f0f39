#pragma once

#include <complex>
#include <functional>
#include <vector>

#include "morseflow/flow.h"

namespace morseflow {

/// Eigenvalue counts: real unstable, complex unstable pairs, real stable,
/// complex stable pairs.
struct Dims {
  int u1 = 0, u2 = 0, s1 = 0, s2 = 0;
  int unstable() const { return u1 + 2 * u2; }
  int stable() const { return s1 + 2 * s2; }
  bool operator==(const Dims&) const = default;
};

struct Equilibrium {
  VectorXd point;
  double eps = 0.0;
  MatrixXd jacobian;
  Eigen::VectorXcd spectrum;  // ordered: real+, complex+, real-, complex-
  Dims dims;
  double residual = 0.0;
};

struct SearchBox {
  VectorXd lo, hi;
  static SearchBox Cube(int dim, double r);
};

struct EquilibriumOptions {
  int grid_density = 11;
  double dedup_radius = 1e-6;
  double hyperbolicity_margin = 1e-6;
  int max_newton = 60;
};

/// f^eps(x) = f(x) + eps (int M) x with the certified quadrature of int M.
VectorXd perturbed_field(const Potential& P, const MatrixXd& M_total, double eps, const VectorXd& x);
MatrixXd perturbed_jacobian(const Potential& P, const MatrixXd& M_total, double eps,
                            const VectorXd& x);

/// Classifies J; throws NonHyperbolic when some |Re lambda| is within margin.
void classify(const MatrixXd& J, double margin, Eigen::VectorXcd* spectrum, Dims* dims);

/// Newton refinement of a single root; returns false if it does not converge.
bool refine_equilibrium(const Potential& P, const MatrixXd& M_total, double eps, VectorXd& x,
                        int max_iter = 60);

/// All roots found from a tensor grid of seeds, sorted by unstable dimension
/// (descending) then lexicographically.
std::vector<Equilibrium> find_equilibria(const Potential& P, const KernelConstants& kc, double eps,
                                         const SearchBox& box, const EquilibriumOptions& opt = {});

Equilibrium make_equilibrium(const Potential& P, const KernelConstants& kc, double eps,
                             const VectorXd& point, double margin = 1e-6);

/// Secant-predictor / Newton-corrector continuation in eps. `inside` tests
/// membership of the eps = 0 block; an empty predicate skips the check.
std::vector<Equilibrium> continue_branch(const Equilibrium& e0, const std::vector<double>& eps_list,
                                         const Potential& P, const KernelConstants& kc,
                                         const std::function<bool(const VectorXd&)>& inside = {},
                                         double margin = 1e-6);

}  // namespace morseflow
