#include "morseflow/equilibria.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "morseflow/errors.h"

namespace morseflow {

namespace {

std::string Fmt(const VectorXd& x) {
  std::ostringstream os;
  os << "(";
  for (int i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
  os << ")";
  return os.str();
}

}  // namespace

SearchBox SearchBox::Cube(int dim, double r) {
  return SearchBox{VectorXd::Constant(dim, -r), VectorXd::Constant(dim, r)};
}

VectorXd perturbed_field(const Potential& P, const MatrixXd& M_total, double eps,
                         const VectorXd& x) {
  VectorXd f = P.grad_F(x);
  if (eps != 0.0) f += eps * (M_total * x);
  return f;
}

MatrixXd perturbed_jacobian(const Potential& P, const MatrixXd& M_total, double eps,
                            const VectorXd& x) {
  MatrixXd j = P.hess_F(x);
  if (eps != 0.0) j += eps * M_total;
  return j;
}

void classify(const MatrixXd& J, double margin, Eigen::VectorXcd* spectrum, Dims* dims) {
  Eigen::EigenSolver<MatrixXd> es(J, false);
  const Eigen::VectorXcd ev = es.eigenvalues();
  const double scale = 1.0 + J.norm();
  std::vector<std::complex<double>> rp, cp, rs, cs;
  for (int i = 0; i < ev.size(); ++i) {
    const auto l = ev(i);
    if (std::abs(l.real()) < margin) {
      std::ostringstream os;
      os << "eigenvalue " << l.real() << (l.imag() >= 0 ? "+" : "") << l.imag()
         << "i within the hyperbolicity margin";
      throw Error(ErrorCode::kNonHyperbolic, os.str());
    }
    const bool cplx = std::abs(l.imag()) > 1e-12 * scale;
    if (cplx && l.imag() < 0) continue;  // one representative per pair
    auto& bin = l.real() > 0 ? (cplx ? cp : rp) : (cplx ? cs : rs);
    bin.push_back(l);
  }
  auto by_real_desc = [](const auto& a, const auto& b) { return a.real() > b.real(); };
  std::sort(rp.begin(), rp.end(), by_real_desc);
  std::sort(cp.begin(), cp.end(), by_real_desc);
  std::sort(rs.begin(), rs.end(), by_real_desc);
  std::sort(cs.begin(), cs.end(), by_real_desc);
  Dims d{static_cast<int>(rp.size()), static_cast<int>(cp.size()), static_cast<int>(rs.size()),
         static_cast<int>(cs.size())};
  if (dims) *dims = d;
  if (spectrum) {
    spectrum->resize(ev.size());
    int k = 0;
    for (auto& l : rp) (*spectrum)(k++) = l;
    for (auto& l : cp) {
      (*spectrum)(k++) = l;
      (*spectrum)(k++) = std::conj(l);
    }
    for (auto& l : rs) (*spectrum)(k++) = l;
    for (auto& l : cs) {
      (*spectrum)(k++) = l;
      (*spectrum)(k++) = std::conj(l);
    }
  }
}

bool refine_equilibrium(const Potential& P, const MatrixXd& M_total, double eps, VectorXd& x,
                        int max_iter) {
  VectorXd f = perturbed_field(P, M_total, eps, x);
  double r = f.norm();
  for (int it = 0; it < max_iter; ++it) {
    if (!std::isfinite(r)) return false;
    if (r <= 1e-14 * (1.0 + x.norm())) return true;
    const MatrixXd J = perturbed_jacobian(P, M_total, eps, x);
    Eigen::FullPivLU<MatrixXd> lu(J);
    if (!lu.isInvertible()) return false;
    const VectorXd dx = lu.solve(f);
    double lam = 1.0;
    VectorXd xn;
    double rn = 0.0;
    for (int h = 0; h < 30; ++h, lam *= 0.5) {
      xn = x - lam * dx;
      rn = perturbed_field(P, M_total, eps, xn).norm();
      if (rn < r || dx.norm() * lam < 1e-15 * (1.0 + x.norm())) break;
    }
    const double step = (xn - x).norm();
    x = xn;
    f = perturbed_field(P, M_total, eps, x);
    r = f.norm();
    if (step <= 1e-15 * (1.0 + x.norm())) break;
  }
  return r <= 1e-10 * (1.0 + x.norm());
}

Equilibrium make_equilibrium(const Potential& P, const KernelConstants& kc, double eps,
                             const VectorXd& point, double margin) {
  Equilibrium e;
  e.point = point;
  e.eps = eps;
  e.jacobian = perturbed_jacobian(P, kc.M_total, eps, point);
  e.residual = perturbed_field(P, kc.M_total, eps, point).norm();
  try {
    classify(e.jacobian, margin, &e.spectrum, &e.dims);
  } catch (const Error& err) {
    throw Error(err.code(), std::string(err.what()) + " at " + Fmt(point));
  }
  return e;
}

std::vector<Equilibrium> find_equilibria(const Potential& P, const KernelConstants& kc, double eps,
                                         const SearchBox& box, const EquilibriumOptions& opt) {
  const int d = P.dim;
  if (box.lo.size() != d || box.hi.size() != d) {
    throw Error(ErrorCode::kInvalidArgument, "search box has wrong dimension");
  }
  const int n = std::max(opt.grid_density, 1);
  long total = 1;
  for (int i = 0; i < d; ++i) total *= n;
  std::vector<VectorXd> roots;
  VectorXd seed(d);
  for (long idx = 0; idx < total; ++idx) {
    long r = idx;
    for (int i = 0; i < d; ++i) {
      const int k = static_cast<int>(r % n);
      r /= n;
      seed(i) = n == 1 ? 0.5 * (box.lo(i) + box.hi(i))
                       : box.lo(i) + (box.hi(i) - box.lo(i)) * k / (n - 1.0);
    }
    VectorXd x = seed;
    if (!refine_equilibrium(P, kc.M_total, eps, x, opt.max_newton)) continue;
    bool in_box = true;
    for (int i = 0; i < d; ++i) {
      const double pad = 1e-9 * (1.0 + std::abs(box.hi(i) - box.lo(i)));
      in_box = in_box && x(i) >= box.lo(i) - pad && x(i) <= box.hi(i) + pad;
    }
    if (!in_box) continue;
    bool dup = false;
    for (const auto& y : roots) dup = dup || (x - y).norm() <= opt.dedup_radius;
    if (!dup) roots.push_back(x);
  }
  std::vector<Equilibrium> out;
  for (const auto& x : roots) out.push_back(make_equilibrium(P, kc, eps, x, opt.hyperbolicity_margin));
  std::sort(out.begin(), out.end(), [](const Equilibrium& a, const Equilibrium& b) {
    if (a.dims.unstable() != b.dims.unstable()) return a.dims.unstable() > b.dims.unstable();
    for (int i = 0; i < a.point.size(); ++i) {
      if (std::abs(a.point(i) - b.point(i)) > 1e-9) return a.point(i) < b.point(i);
    }
    return false;
  });
  return out;
}

std::vector<Equilibrium> continue_branch(const Equilibrium& e0, const std::vector<double>& eps_list,
                                         const Potential& P, const KernelConstants& kc,
                                         const std::function<bool(const VectorXd&)>& inside,
                                         double margin) {
  if (eps_list.empty()) return {};
  if (std::abs(eps_list.front() - e0.eps) > 1e-15) {
    throw Error(ErrorCode::kInvalidArgument, "eps_list must start at the equilibrium's eps");
  }
  for (std::size_t i = 1; i < eps_list.size(); ++i) {
    if (!(eps_list[i] > eps_list[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "eps_list must be increasing");
    }
  }
  std::vector<Equilibrium> out;
  out.push_back(make_equilibrium(P, kc, e0.eps, e0.point, margin));
  for (std::size_t i = 1; i < eps_list.size(); ++i) {
    const double de = eps_list[i] - eps_list[i - 1];
    VectorXd x;
    if (i == 1) {
      // Tangent predictor dx/deps = -J^{-1} (int M) x.
      const Equilibrium& prev = out.back();
      x = prev.point - de * prev.jacobian.fullPivLu().solve(kc.M_total * prev.point);
    } else {
      const double dp = eps_list[i - 1] - eps_list[i - 2];
      x = out.back().point + (out.back().point - out[out.size() - 2].point) * (de / dp);
    }
    if (!refine_equilibrium(P, kc.M_total, eps_list[i], x)) {
      throw Error(ErrorCode::kNewtonStall,
                  "corrector failed at eps=" + std::to_string(eps_list[i]));
    }
    if (inside && !inside(x)) {
      throw Error(ErrorCode::kLeftBlock, "branch left the block at eps=" +
                                             std::to_string(eps_list[i]) + ", point " + Fmt(x));
    }
    Equilibrium e = make_equilibrium(P, kc, eps_list[i], x, margin);
    if (!(e.dims == out.front().dims)) {
      throw Error(ErrorCode::kDimChange, "classification changed at eps=" +
                                             std::to_string(eps_list[i]));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace morseflow
