#pragma once

#include <Eigen/Dense>

namespace morseflow::detail {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Newton on a small square system with a reusable forward-difference Jacobian.
struct SmallNewton {
  MatrixXd J;
  bool have_J = false;

  template <typename Fn>
  bool solve(Fn&& F, VectorXd& x, VectorXd& r, double tol, int max_iter, double fd_step) {
    const int n = static_cast<int>(x.size());
    r = F(x);
    if (n == 0) return true;
    for (int it = 0; it < max_iter; ++it) {
      if (r.norm() <= tol) return true;
      if (!have_J || it > 2) {
        J.resize(r.size(), n);
        for (int i = 0; i < n; ++i) {
          VectorXd xp = x;
          xp(i) += fd_step;
          J.col(i) = (F(xp) - r) / fd_step;
        }
        have_J = true;
      }
      const VectorXd dx = J.colPivHouseholderQr().solve(-r);
      double lam = 1.0;
      bool accepted = false;
      for (int k = 0; k < 12; ++k, lam *= 0.5) {
        const VectorXd xt = x + lam * dx;
        VectorXd rt = F(xt);
        if (rt.allFinite() && rt.norm() < r.norm() * (1.0 - 1e-4 * lam) + 1e-300) {
          x = xt;
          r = std::move(rt);
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (r.norm() <= 10.0 * tol) return true;
        if (have_J && it <= 2) {
          have_J = false;  // stale Jacobian; rebuild before giving up
          continue;
        }
        return false;
      }
    }
    return r.norm() <= 10.0 * tol;
  }
};

}  // namespace morseflow::detail
