#include "morseflow/blocks.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "morseflow/errors.h"
#include "morseflow/sampling.h"

namespace morseflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Component {
  int start;
  int size;  // 1 real, 2 complex pair
  bool unstable;
};

std::vector<Component> Layout(const Dims& d) {
  std::vector<Component> c;
  int k = 0;
  for (int i = 0; i < d.u1; ++i, k += 1) c.push_back({k, 1, true});
  for (int i = 0; i < d.u2; ++i, k += 2) c.push_back({k, 2, true});
  for (int i = 0; i < d.s1; ++i, k += 1) c.push_back({k, 1, false});
  for (int i = 0; i < d.s2; ++i, k += 2) c.push_back({k, 2, false});
  return c;
}

double Cond(const MatrixXd& T) {
  Eigen::JacobiSVD<MatrixXd> svd(T);
  const auto& s = svd.singularValues();
  return s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1) : kInf;
}

// Fills component c of y from unit-cube coordinates u (one or two used).
void PlaceInterior(const Component& c, double r, const double* u, VectorXd& y) {
  if (c.size == 1) {
    y(c.start) = r * (2.0 * u[0] - 1.0);
  } else {
    const double rho = r * std::sqrt(u[0]);
    y(c.start) = rho * std::cos(kTwoPi * u[1]);
    y(c.start + 1) = rho * std::sin(kTwoPi * u[1]);
  }
}

double CompNorm(const Component& c, const VectorXd& y) {
  return c.size == 1 ? std::abs(y(c.start)) : std::hypot(y(c.start), y(c.start + 1));
}

double CompDot(const Component& c, const VectorXd& h, const VectorXd& y) {
  return c.size == 1 ? h(c.start) * y(c.start)
                     : h(c.start) * y(c.start) + h(c.start + 1) * y(c.start + 1);
}

double RowsNorm(const MatrixXd& m, const Component& c) {
  return spectral_norm(m.middleRows(c.start, c.size));
}

// Real Schur inside one invariant block with 2x2 pairs put in the
// [[a, b], [-b, a]] form and couplings scaled below kappa.
MatrixXd SchurFrame(const MatrixXd& B, double kappa) {
  const int n = static_cast<int>(B.rows());
  if (n == 0) return MatrixXd(0, 0);
  Eigen::RealSchur<MatrixXd> rs(B);
  MatrixXd Z = rs.matrixU();
  MatrixXd S = rs.matrixT();
  std::vector<int> block_of(n), starts;
  for (int i = 0; i < n;) {
    starts.push_back(i);
    const bool pair = i + 1 < n && std::abs(S(i + 1, i)) > 1e-14 * (1.0 + S.norm());
    block_of[i] = static_cast<int>(starts.size()) - 1;
    if (pair) {
      block_of[i + 1] = block_of[i];
      MatrixXd W = MatrixXd::Identity(n, n);
      Eigen::EigenSolver<Eigen::Matrix2d> es(S.block<2, 2>(i, i));
      int k = es.eigenvalues()(0).imag() > 0 ? 0 : 1;
      Eigen::Vector2cd v = es.eigenvectors().col(k);
      // Rotate v so that Re v and Im v are orthogonal.
      const Eigen::Vector2d a0 = v.real(), b0 = v.imag();
      const double phi = 0.5 * std::atan2(2.0 * a0.dot(b0), a0.squaredNorm() - b0.squaredNorm());
      v *= std::polar(1.0, -phi);
      W(i, i) = v(0).real();
      W(i + 1, i) = v(1).real();
      W(i, i + 1) = v(0).imag();
      W(i + 1, i + 1) = v(1).imag();
      const MatrixXd Wi = W.inverse();
      S = Wi * S * W;
      Z = Z * W;
      i += 2;
    } else {
      i += 1;
    }
  }
  double off = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (block_of[i] != block_of[j]) off = std::max(off, std::abs(S(i, j)));
    }
  }
  const double t = off > kappa ? kappa / off : 1.0;
  VectorXd D(n);
  for (int i = 0; i < n; ++i) D(i) = std::pow(t, block_of[i]);
  return Z * D.asDiagonal();
}

}  // namespace

CoordinateFrame build_frame(const MatrixXd& J, double kappa, double margin) {
  const int d = static_cast<int>(J.rows());
  CoordinateFrame fr;
  fr.kappa = kappa;
  classify(J, margin, nullptr, &fr.dims);

  const bool symmetric = (J - J.transpose()).norm() <= 1e-12 * (1.0 + J.norm());
  if (symmetric) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (J + J.transpose()));
    fr.T.resize(d, d);
    for (int k = 0; k < d; ++k) {
      VectorXd v = es.eigenvectors().col(d - 1 - k);  // descending eigenvalues
      int imax = 0;
      v.cwiseAbs().maxCoeff(&imax);
      if (v(imax) < 0) v = -v;
      fr.T.col(k) = v;
    }
    fr.T_inv = fr.T.transpose();
  } else {
    Eigen::EigenSolver<MatrixXd> es(J);
    const Eigen::VectorXcd ev = es.eigenvalues();
    const double scale = 1.0 + J.norm();
    struct Item {
      int idx;
      bool cplx;
      bool unstable;
      double re;
    };
    std::vector<Item> items;
    for (int i = 0; i < d; ++i) {
      const bool cplx = std::abs(ev(i).imag()) > 1e-12 * scale;
      if (cplx && ev(i).imag() < 0) continue;
      items.push_back({i, cplx, ev(i).real() > 0, ev(i).real()});
    }
    auto rank = [](const Item& it) { return (it.unstable ? 0 : 2) + (it.cplx ? 1 : 0); };
    std::stable_sort(items.begin(), items.end(), [&](const Item& a, const Item& b) {
      if (rank(a) != rank(b)) return rank(a) < rank(b);
      return a.re > b.re;
    });
    fr.T.resize(d, d);
    int col = 0;
    for (const auto& it : items) {
      Eigen::VectorXcd v = es.eigenvectors().col(it.idx);
      if (!it.cplx) {
        VectorXd r = v.real();
        if (r.norm() < 1e-12) r = v.imag();
        r.normalize();
        int imax = 0;
        r.cwiseAbs().maxCoeff(&imax);
        if (r(imax) < 0) r = -r;
        fr.T.col(col++) = r;
      } else {
        const VectorXd a0 = v.real(), b0 = v.imag();
        const double phi =
            0.5 * std::atan2(2.0 * a0.dot(b0), a0.squaredNorm() - b0.squaredNorm());
        v *= std::polar(1.0, -phi);
        const double nv = std::sqrt(v.real().squaredNorm() + v.imag().squaredNorm());
        fr.T.col(col++) = v.real() / nv;
        fr.T.col(col++) = v.imag() / nv;
      }
    }
    fr.cond = Cond(fr.T);
    if (fr.cond > 1e8) {
      // Defective or nearly so: split by the matrix sign function, then
      // triangularize each invariant block.
      MatrixXd S = J;
      for (int it = 0; it < 100; ++it) {
        const MatrixXd Sn = 0.5 * (S + S.inverse());
        const double ch = (Sn - S).norm();
        S = Sn;
        if (ch <= 1e-14 * S.norm()) break;
      }
      const MatrixXd I = MatrixXd::Identity(d, d);
      const int u = fr.dims.unstable();
      auto basis = [&](const MatrixXd& P, int k) {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(P);
        MatrixXd Qm = qr.householderQ();
        return MatrixXd(Qm.leftCols(k));
      };
      MatrixXd T0(d, d);
      T0 << basis(0.5 * (I + S), u), basis(0.5 * (I - S), d - u);
      const MatrixXd Jb = T0.inverse() * J * T0;
      MatrixXd Z = MatrixXd::Zero(d, d);
      Z.topLeftCorner(u, u) = SchurFrame(Jb.topLeftCorner(u, u), kappa);
      Z.bottomRightCorner(d - u, d - u) = SchurFrame(Jb.bottomRightCorner(d - u, d - u), kappa);
      fr.T = T0 * Z;
      fr.eigen_path = false;
    }
    fr.T_inv = fr.T.inverse();
  }
  fr.cond = Cond(fr.T);
  if (fr.cond > 1e12) {
    throw Error(ErrorCode::kIllConditioned, "cond(T) = " + std::to_string(fr.cond));
  }
  fr.jordan = fr.T_inv * J * fr.T;
  // Clear round-off below the coupling budget.
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i != j && std::abs(fr.jordan(i, j)) < 1e-14 * (1.0 + J.norm())) fr.jordan(i, j) = 0.0;
    }
  }
  return fr;
}

bool IsolatingBlock::contains_local(const VectorXd& y, double scale_u, double scale_s) const {
  for (const auto& c : Layout(dims)) {
    const double r = (c.unstable ? scale_u : scale_s) * delta;
    if (CompNorm(c, y) > r * (1.0 + 1e-12)) return false;
  }
  return true;
}

double IsolatingBlock::unstable_size(const VectorXd& y) const {
  double m = 0.0;
  for (const auto& c : Layout(dims)) {
    if (c.unstable) m = std::max(m, CompNorm(c, y) / delta);
  }
  return m;
}

double IsolatingBlock::stable_size(const VectorXd& y) const {
  double m = 0.0;
  for (const auto& c : Layout(dims)) {
    if (!c.unstable) m = std::max(m, CompNorm(c, y) / delta);
  }
  return m;
}

std::vector<VectorXd> sample_block(const IsolatingBlock& b, double scale_u, double scale_s, int n,
                                   std::uint64_t seed) {
  const int d = b.center.point.size();
  const auto comps = Layout(b.dims);
  std::vector<VectorXd> out;
  // Corners of the real coordinates (pairs at angle 0).
  const int nc = static_cast<int>(comps.size());
  if (nc <= 10) {
    for (int mask = 0; mask < (1 << nc); ++mask) {
      VectorXd y = VectorXd::Zero(d);
      for (int k = 0; k < nc; ++k) {
        const double r = (comps[k].unstable ? scale_u : scale_s) * b.delta;
        y(comps[k].start) = (mask >> k & 1) ? r : -r;
      }
      out.push_back(b.to_global(y));
    }
  }
  out.push_back(b.center.point);
  Halton h(d, seed);
  for (int i = 0; i < n; ++i) {
    const auto u = h.point(i);
    VectorXd y = VectorXd::Zero(d);
    for (const auto& c : comps) {
      PlaceInterior(c, (c.unstable ? scale_u : scale_s) * b.delta, &u[c.start], y);
    }
    out.push_back(b.to_global(y));
  }
  return out;
}

double memory_radius(const IsolatingBlock& b, double eps, const Potential& P,
                     const KernelConstants& kc, int n_samples) {
  const double ca = kc.usable_decay();
  const double den = ca - 2.0 * eps * kc.D_A * kc.D_M;
  if (!(den > 0)) {
    throw Error(ErrorCode::kEpsTooLarge,
                "eps = " + std::to_string(eps) + " >= C_A/(2 D_A D_M) = " +
                    std::to_string(ca / (2.0 * kc.D_A * kc.D_M)));
  }
  double sup_f = 0.0, sup_z = 0.0;
  for (const auto& x : sample_block(b, 2.0, 2.0, n_samples, 0)) {
    sup_f = std::max(sup_f, P.grad_F(x).norm());
    sup_z = std::max(sup_z, x.norm());
  }
  return 1.1 * 2.0 * kc.D_A * (sup_f + eps * kc.int_norm_M * sup_z) / den;
}

namespace {

enum class Face { kEntry, kExit };

// Calls fn(y, comp) for boundary samples of the entry or exit set.
template <typename Fn>
int ForBoundary(const IsolatingBlock& b, Face face, int n, std::uint64_t seed, Fn&& fn) {
  const int d = b.center.point.size();
  const auto comps = Layout(b.dims);
  std::vector<int> faces;
  for (int k = 0; k < static_cast<int>(comps.size()); ++k) {
    if (comps[k].unstable == (face == Face::kExit)) faces.push_back(k);
  }
  if (faces.empty()) return 0;
  Halton h(d + 1, seed + (face == Face::kExit ? 7919 : 0));
  int count = 0;
  for (int i = 0; i < n; ++i) {
    const auto u = h.point(i);
    const Component& fc = comps[faces[std::min<int>(faces.size() - 1, u[d] * faces.size())]];
    VectorXd y = VectorXd::Zero(d);
    for (const auto& c : comps) {
      const double r = (c.unstable ? 2.0 : 1.0) * b.delta;
      if (&c != &fc) {
        PlaceInterior(c, r, &u[c.start], y);
        continue;
      }
      double rho = b.delta;
      if (face == Face::kExit) rho = b.delta * (1.0 + (c.size == 1 ? std::abs(2.0 * u[c.start] - 1.0) : u[c.start]));
      if (c.size == 1) {
        y(c.start) = (u[c.start] < 0.5 ? -1.0 : 1.0) * rho;
      } else {
        const double th = kTwoPi * u[c.start + 1];
        y(c.start) = rho * std::cos(th);
        y(c.start + 1) = rho * std::sin(th);
      }
    }
    fn(y, fc);
    ++count;
  }
  return count;
}

struct GeomBounds {
  double r = 0.0;  // sup |x - x0| over N(2 delta)
};

double TaylorRemainder(const IsolatingBlock& b, const Potential& P) {
  const double tn = spectral_norm(b.frame.T);
  const double ti = spectral_norm(b.frame.T_inv);
  const int nc = static_cast<int>(Layout(b.dims).size());
  const double ymax = 2.0 * b.delta * std::sqrt(static_cast<double>(nc));
  const double rad = b.center.point.cwiseAbs().maxCoeff() + tn * ymax;
  return 0.5 * P.third_deriv_bound(rad) * tn * ti * (2.0 * b.delta) * (2.0 * b.delta);
}

IsolationMargins Boundary(const IsolatingBlock& b, double eps, const Potential& P,
                          const KernelConstants* kc, int n, std::uint64_t seed) {
  IsolationMargins m;
  const MatrixXd Wt = kc ? kc->M_total : MatrixXd::Zero(b.center.point.size(), b.center.point.size());
  const double eta_coef = kc ? eps * kc->D_M * b.R : 0.0;
  auto h_at = [&](const VectorXd& y) {
    return VectorXd(b.frame.T_inv * perturbed_field(P, Wt, eps, b.to_global(y)));
  };
  auto h0_at = [&](const VectorXd& y) {
    return VectorXd(b.frame.T_inv * P.grad_F(b.to_global(y)));
  };
  m.samples += ForBoundary(b, Face::kEntry, n, seed, [&](const VectorXd& y, const Component& c) {
    const VectorXd hv = h_at(y);
    const double bound = eta_coef * RowsNorm(b.frame.T_inv, c) * CompNorm(c, y);
    m.entry = std::min(m.entry, -CompDot(c, hv, y) - bound);
    m.unperturbed_rate = std::min(m.unperturbed_rate, -CompDot(c, h0_at(y), y) / CompNorm(c, y));
  });
  m.samples += ForBoundary(b, Face::kExit, n, seed, [&](const VectorXd& y, const Component& c) {
    const VectorXd hv = h_at(y);
    const double bound = eta_coef * RowsNorm(b.frame.T_inv, c) * CompNorm(c, y);
    m.exit = std::min(m.exit, CompDot(c, hv, y) - bound);
    m.unperturbed_rate = std::min(m.unperturbed_rate, CompDot(c, h0_at(y), y) / CompNorm(c, y));
  });
  m.taylor_remainder = TaylorRemainder(b, P);
  return m;
}

}  // namespace

IsolationMargins unperturbed_isolation_margins(const IsolatingBlock& b, const Potential& P,
                                         int n_boundary_samples, std::uint64_t seed) {
  IsolationMargins m = Boundary(b, 0.0, P, nullptr, n_boundary_samples, seed);
  m.memory = kInf;
  return m;
}

IsolationMargins verify_isolation(const IsolatingBlock& b, double eps, const Potential& P,
                                  const KernelConstants& kc, int n_boundary_samples,
                                  std::uint64_t seed) {
  IsolationMargins m = Boundary(b, eps, P, &kc, n_boundary_samples, seed);
  // (III): d/dt |eta|^2 < 0 on |eta| = R over B_u(2 delta) x B_s(delta).
  const double ca = kc.usable_decay();
  double r = 0.0;
  for (const auto& x : sample_block(b, 2.0, 2.0, 0, 0)) r = std::max(r, (x - b.center.point).norm());
  for (const auto& x : sample_block(b, 2.0, 1.0, n_boundary_samples, seed + 104729)) {
    const double drive = P.grad_F(x).norm() + eps * kc.int_norm_M * x.norm();
    const double s = b.R * ((ca - 2.0 * eps * kc.D_A * kc.D_M) * b.R - 2.0 * kc.D_A * drive);
    m.memory = std::min(m.memory, s);
    ++m.samples;
  }
  m.g_bound = eps * spectral_norm(b.frame.T_inv) *
              (kc.D_M * b.R + kc.int_norm_M * (b.center.point.norm() + r));
  return m;
}

double coercivity(const IsolatingBlock& b, double eps, const Potential& P,
                  const KernelConstants& kc, int n_samples) {
  const VectorXd& q = b.cone.Q;
  double G = kInf;
  for (const auto& x : sample_block(b, 1.0, 1.0, n_samples, 0)) {
    const MatrixXd Jy = b.frame.T_inv * perturbed_jacobian(P, kc.M_total, eps, x) * b.frame.T;
    const MatrixXd S = q.asDiagonal() * Jy + Jy.transpose() * q.asDiagonal();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
    G = std::min(G, es.eigenvalues()(0));
  }
  return G;
}

namespace {

double DfNorm(const IsolatingBlock& b, double eps, const Potential& P, const KernelConstants& kc,
              int n) {
  double m = 0.0;
  for (const auto& x : sample_block(b, 1.0, 1.0, n, 0)) {
    m = std::max(m, spectral_norm(perturbed_jacobian(P, kc.M_total, eps, x) * b.frame.T));
  }
  return m;
}

}  // namespace

ConeCertificate cone_certificate(const IsolatingBlock& b, double eps, double E, const Potential& P,
                                 const KernelConstants& kc, int n_samples) {
  if (!(E > 0)) throw Error(ErrorCode::kInvalidArgument, "E must be positive");
  ConeCertificate c;
  c.G = coercivity(b, eps, P, kc, n_samples);
  if (!(c.G > 0)) {
    throw Error(ErrorCode::kNoCoercivity, "G = " + std::to_string(c.G) + " <= 0");
  }
  const double ca = kc.usable_decay();
  c.df_norm = DfNorm(b, eps, P, kc, n_samples);
  const double qn = b.cone.Q.cwiseAbs().maxCoeff();
  const double off = eps * kc.D_M * qn * spectral_norm(b.frame.T_inv) + E * kc.D_A * c.df_norm;
  c.B << c.G, -off, -off, ca * E - 2.0 * eps * kc.D_A * kc.D_M;
  c.positive = c.B.determinant() > 0 && c.B.trace() > 0;
  c.E_bound = ca * c.G / (kc.D_A * kc.D_A * c.df_norm * c.df_norm);
  return c;
}

ConeBudget parameterized_cone_budget(const IsolatingBlock& b, double E, const KernelConstants& kc,
                                     const Potential& P, double Q_scale, int n_samples) {
  ConeBudget out;
  IsolatingBlock bq = b;
  bq.cone.Q = b.cone.Q * Q_scale;
  const double qn = bq.cone.Q.cwiseAbs().maxCoeff();
  out.Q_norm = qn;
  const double ca = kc.usable_decay();
  const double da = kc.D_A, dm = kc.D_M, im = kc.int_norm_M;
  const double ti = std::max(1.0, spectral_norm(b.frame.T_inv));
  const double tn = spectral_norm(b.frame.T);
  double sup_x = 0.0;
  for (const auto& x : sample_block(b, 1.0, 1.0, 0, 0)) sup_x = std::max(sup_x, x.norm());
  out.R_bar = ti * (im * sup_x + dm * b.R);

  double G = coercivity(bq, 0.0, P, kc, n_samples);
  if (!(G > 0)) throw Error(ErrorCode::kNoCoercivity, "G = " + std::to_string(G) + " <= 0");
  const double df = DfNorm(b, 0.0, P, kc, n_samples);
  auto solve = [&](double g, double e_in, ConeBudget& o) {
    o.G = g;
    o.E_max = ca * g / (da * da * df * df);
    o.E_limit = ca * g / (100.0 * da * da * df * df);
    o.E = e_in > 0 ? e_in : o.E_limit;
    const double rb2 = o.R_bar * o.R_bar;
    o.L0 = std::max({100.0 * o.E_max * qn * da * da * rb2 / (ca * g),
                     100.0 * qn * qn * rb2 / (ca * g), 16.0 * qn * qn * qn * rb2 / (g * g),
                     64.0 * o.E_max * da * da * rb2 / (ca * ca)});
    double delta = kInf;
    if (dm > 0) delta = std::min(delta, std::sqrt(o.E * ca * g / (100.0 * qn * qn * dm * dm * ti * ti)));
    if (im > 0) delta = std::min(delta, std::sqrt(ca * g / (100.0 * o.E * da * da * im * im * tn * tn)));
    if (da * dm > 0) delta = std::min(delta, ca / (8.0 * da * dm));
    o.Delta = delta;
  };
  solve(G, E, out);
  if (E > 0 && E > out.E_limit * (1.0 + 1e-12)) {
    throw Error(ErrorCode::kInadmissibleE, "E = " + std::to_string(E) + " exceeds " +
                                               std::to_string(out.E_limit));
  }
  if (std::isfinite(out.Delta)) {
    // lambda_min is concave in eps, so the endpoints bound G on [0, Delta].
    const double g1 = std::min(G, coercivity(bq, out.Delta, P, kc, n_samples));
    if (!(g1 > 0)) throw Error(ErrorCode::kNoCoercivity, "G(Delta) <= 0");
    if (g1 < G) {
      solve(g1, E > 0 ? E : 0.0, out);
      if (E <= 0) out.E = std::min(out.E, ca * g1 / (100.0 * da * da * df * df));
    }
  }
  return out;
}

ConeDynamicReport verify_cone_dynamic(const IsolatingBlock& b,
                                      std::shared_ptr<const MemoryModel> model, double eps1,
                                      double eps2, double E, double L, int n_pairs, double t_span,
                                      std::uint64_t seed) {
  ConeDynamicReport rep;
  const int d = model->dim();
  const auto m1 = model->with_eps(eps1);
  const auto m2 = model->with_eps(eps2);
  const double de = eps1 - eps2;
  const VectorXd& q = b.cone.Q;
  const double c_eps = L * de * de;
  const long steps = std::max(1L, std::lround(t_span / model->dt()));
  const int nodes = model->nodes();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N01(0.0, 1.0);
  const auto& tab = model->tables();

  auto profile = [&](const VectorXd& dir, double rate) {
    return HistoryFunction::Sample(d, nodes, model->dt(), [&](double s) {
      return VectorXd(dir * (1.0 - std::exp(-rate * s)) * std::exp(-0.25 * rate * s));
    });
  };
  auto form = [&](const DelayIntegrator& a, const DelayIntegrator& c) {
    const VectorXd dy = b.frame.T_inv * (a.value() - c.value());
    return dy.dot(q.asDiagonal() * dy) - E * a.eta_distance_sq(c) + c_eps;
  };

  int attempts = 0;
  while (rep.pairs < n_pairs && attempts < 50 * n_pairs) {
    ++attempts;
    VectorXd y1(d), dir(d), v(d), w(d);
    for (int i = 0; i < d; ++i) {
      y1(i) = (2.0 * U(rng) - 1.0) * 0.8 * b.delta;
      dir(i) = N01(rng);
      v(i) = N01(rng);
      w(i) = N01(rng);
    }
    dir.normalize();
    v.normalize();
    w.normalize();
    const double rho = U(rng) * 0.2 * b.delta;
    const VectorXd y2 = y1 + rho * dir;
    if (!b.contains_local(y1) || !b.contains_local(y2)) continue;
    const VectorXd dyv = y1 - y2;
    const double target = (dyv.dot(q.asDiagonal() * dyv) + c_eps) / E;  // |d eta|^2
    if (target < 0) continue;
    HistoryFunction deta = profile(v, 0.5 + 1.5 * U(rng));
    const double n0 = model->norm_sq(deta);
    deta.values *= std::sqrt(target / n0);
    HistoryFunction base = profile(w, 0.5 + 1.5 * U(rng));
    base.values *= std::sqrt(U(rng)) * 0.25 * b.R / std::sqrt(model->norm_sq(base));
    HistoryFunction eta1 = base, eta2 = base;
    eta1.values += 0.5 * deta.values;
    eta2.values -= 0.5 * deta.values;
    if (std::sqrt(model->norm_sq(eta1)) > b.R || std::sqrt(model->norm_sq(eta2)) > b.R) continue;

    DelayIntegrator i1(*m1, HistoryState{b.to_global(y1), eta1, 0.0});
    DelayIntegrator i2(*m2, HistoryState{b.to_global(y2), eta2, 0.0});
    // Exact t = 0 derivative of the form on the step grid.
    const VectorXd dx = i1.value() - i2.value();
    const VectorXd dxd = i1.derivative() - i2.derivative();
    const VectorXd dy = b.frame.T_inv * dx, dyd = b.frame.T_inv * dxd;
    HistoryFunction dh = i1.eta();
    dh.values -= i2.eta().values;
    double da_form = 0.0;
    VectorXd a_int = VectorXd::Zero(d);
    for (int k = 1; k < tab.a_nodes; ++k) {
      const VectorXd e = dh.values.col(k);
      da_form += tab.wa[k] * e.dot(tab.dA[k] * e);
      a_int += tab.wa[k] * (tab.A[k] * e);
    }
    const double deriv =
        2.0 * dy.dot(q.asDiagonal() * dyd) - E * (da_form - 2.0 * a_int.dot(dxd));
    rep.min_derivative = std::min(rep.min_derivative, deriv);
    ++rep.pairs;
    bool left = false;
    for (long s = 0; s < steps; ++s) {
      i1.step();
      i2.step();
      if (!b.contains(i1.value()) || !b.contains(i2.value())) {
        left = true;
        break;
      }
      rep.min_form = std::min(rep.min_form, form(i1, i2));
    }
    if (left) ++rep.pairs_left_block;
  }
  if (rep.pairs == 0) rep.min_form = rep.min_derivative = std::numeric_limits<double>::quiet_NaN();
  return rep;
}

IsolatingBlock build_block(const Equilibrium& e, const std::vector<Equilibrium>& others,
                           const Potential& P, const KernelConstants& kc,
                           const BlockOptions& opt) {
  IsolatingBlock b;
  b.center = e;
  b.frame = build_frame(e.jacobian, opt.kappa);
  b.dims = b.frame.dims;
  const int d = e.point.size();
  b.cone.Q = VectorXd::Constant(d, -1.0);
  b.cone.Q.head(b.dims.unstable()).setOnes();

  double gap = kInf;
  for (const auto& o : others) {
    const double dist = (o.point - e.point).norm();
    if (dist > 1e-9) gap = std::min(gap, dist);
  }
  if (!std::isfinite(gap)) gap = 1.0;
  double delta = opt.delta > 0 ? opt.delta : opt.delta_fraction * gap;
  const double eps_max = *std::max_element(opt.verify_eps.begin(), opt.verify_eps.end());
  b.R_eps = eps_max;

  for (int h = 0; h <= opt.max_halvings; ++h, delta *= 0.5) {
    b.delta = delta;
    b.R = memory_radius(b, eps_max, P, kc);
    bool ok = true;
    IsolationMargins worst;
    for (double eps : opt.verify_eps) {
      IsolationMargins m = verify_isolation(b, eps, P, kc, opt.n_boundary_samples, opt.seed);
      if (!m.certified()) ok = false;
      if (eps == eps_max || worst.samples == 0) worst = m;
      worst.entry = std::min(worst.entry, m.entry);
      worst.exit = std::min(worst.exit, m.exit);
      worst.memory = std::min(worst.memory, m.memory);
    }
    double G = -kInf;
    try {
      G = coercivity(b, eps_max, P, kc);
    } catch (const Error&) {
    }
    b.margins = worst;
    if (ok && G > 0) {
      b.cone.G = G;
      const ConeCertificate cc = cone_certificate(b, eps_max, 1.0, P, kc);
      b.cone.E = 0.5 * cc.E_bound;
      const ConeCertificate c2 = cone_certificate(b, eps_max, b.cone.E, P, kc);
      b.margins.cone_det = c2.B.determinant();
      try {
        const ConeBudget cb = parameterized_cone_budget(b, 0.0, kc, P);
        b.cone.L_param = cb.L0;
        b.cone.Delta = cb.Delta;
      } catch (const Error&) {
        b.cone.L_param = std::numeric_limits<double>::quiet_NaN();
        b.cone.Delta = 0.0;
      }
      return b;
    }
    if (opt.delta > 0) break;
  }
  return b;
}

}  // namespace morseflow
