#include "morseflow/potential.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "morseflow/errors.h"

namespace morseflow {

Potential quartic_potential(int dim, double a, double b, double c) {
  if (dim < 1) throw Error(ErrorCode::kInvalidArgument, "dimension must be >= 1");
  if (!(b > 0)) throw Error(ErrorCode::kInvalidArgument, "quartic coefficient must be > 0");
  Potential p;
  p.family = "quartic";
  p.dim = dim;
  p.F = [a, b, c](const VectorXd& x) {
    double v = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      const double x2 = x(i) * x(i);
      v += 0.5 * a * x2 - 0.25 * b * x2 * x2;
    }
    if (c != 0.0) {
      const double s = x.sum();
      v += 0.5 * c * (s * s - x.squaredNorm());
    }
    return v;
  };
  p.grad_F = [a, b, c](const VectorXd& x) {
    VectorXd g = a * x - b * x.array().cube().matrix();
    if (c != 0.0) g.array() += c * (x.sum() - x.array());
    return g;
  };
  p.hess_F = [a, b, c](const VectorXd& x) {
    MatrixXd h = MatrixXd::Constant(x.size(), x.size(), c);
    for (int i = 0; i < x.size(); ++i) h(i, i) = a - 3.0 * b * x(i) * x(i);
    return h;
  };
  p.third_deriv_bound = [b](double r) { return 6.0 * b * r; };

  // -f(x).x >= b|x|^4/d - (a + |c|(d-1))|x|^2, so C_F holds once
  // |x|^2 >= d (a + |c|(d-1) + C_F) / b; R carries a 4/3 cushion.
  const double lin = a + std::abs(c) * (dim - 1);
  p.diss_C_F = 0.5;
  p.diss_R = std::sqrt(4.0 / 3.0 * dim * (lin + p.diss_C_F) / b);
  // F <= sum_i (alpha x_i^2 - b x_i^4/4) - gamma|x|^2 with alpha as below.
  p.quad_gamma = 0.5;
  const double alpha = 0.5 * a + 0.5 * std::abs(c) * (dim - 1) + p.quad_gamma;
  p.quad_delta = alpha > 0 ? dim * alpha * alpha / b : 0.0;
  return p;
}

Potential linear_field(const MatrixXd& J) {
  Potential p;
  p.family = "linear";
  p.dim = static_cast<int>(J.rows());
  if ((J - J.transpose()).norm() <= 1e-14 * (1.0 + J.norm())) {
    p.F = [J](const VectorXd& x) { return 0.5 * x.dot(J * x); };
  }
  p.grad_F = [J](const VectorXd& x) -> VectorXd { return J * x; };
  p.hess_F = [J](const VectorXd&) -> MatrixXd { return J; };
  p.third_deriv_bound = [](double) { return 0.0; };
  return p;
}

PotentialCheck check_potential(const Potential& P, int n_samples, unsigned long long seed) {
  PotentialCheck out;
  out.diss2_margin = std::numeric_limits<double>::infinity();
  out.diss_margin = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int d = P.dim;
  for (int k = 0; k < n_samples; ++k) {
    VectorXd dir(d);
    for (int i = 0; i < d; ++i) dir(i) = gauss(rng);
    dir.normalize();
    const MatrixXd h = P.hess_F(dir * (3.0 * unif(rng)));
    out.hess_asymmetry = std::max(out.hess_asymmetry, (h - h.transpose()).norm());
    if (P.diss_R > 0) {
      const VectorXd x = dir * (P.diss_R * (1.0 + unif(rng)));
      out.diss2_margin =
          std::min(out.diss2_margin, -P.grad_F(x).dot(x) - P.diss_C_F * x.squaredNorm());
    }
    if (P.F) {
      const VectorXd x = dir * (4.0 * P.diss_R * unif(rng));
      out.diss_margin = std::min(
          out.diss_margin, -P.quad_gamma * x.squaredNorm() + P.quad_delta - P.F(x));
    }
  }
  out.ok = out.hess_asymmetry <= 1e-12 && out.diss2_margin >= 0 && out.diss_margin >= 0;
  return out;
}

}  // namespace morseflow
