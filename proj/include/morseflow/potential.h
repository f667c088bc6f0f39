#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace morseflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// The driving field f = grad F of x' = f(x), with the bounds the analysis
/// needs. `F` is empty for non-gradient test fields.
struct Potential {
  std::string family;
  int dim = 1;
  std::function<double(const VectorXd&)> F;
  std::function<VectorXd(const VectorXd&)> grad_F;
  std::function<MatrixXd(const VectorXd&)> hess_F;
  // Bound on the operator norm of D^2 f over the cube |x|_inf <= r.
  std::function<double(double r)> third_deriv_bound;
  double diss_R = 0.0;
  double diss_C_F = 0.0;
  double quad_gamma = 0.0;
  double quad_delta = 0.0;

  bool is_gradient() const { return static_cast<bool>(F); }
};

/// F(x) = sum_i (a x_i^2/2 - b x_i^4/4) + c sum_{i<j} x_i x_j.
/// With a = b = 1, c = 0 this is the double well (d = 1) or the product of
/// two wells (d = 2).
Potential quartic_potential(int dim, double a = 1.0, double b = 1.0, double c = 0.0);

/// f(x) = J x. Gradient (F = x'Jx/2) only when J is symmetric.
Potential linear_field(const MatrixXd& J);

struct PotentialCheck {
  double hess_asymmetry = 0.0;
  double diss2_margin = 0.0;  // min over samples of -f(x).x - C_F|x|^2
  double diss_margin = 0.0;   // min over samples of -gamma|x|^2 + delta - F(x)
  bool ok = false;
};

/// Samples the stated invariants of a Potential.
PotentialCheck check_potential(const Potential& P, int n_samples, unsigned long long seed);

}  // namespace morseflow
