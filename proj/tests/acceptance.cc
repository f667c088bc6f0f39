// One PASS/FAIL line per acceptance criterion; nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "morseflow/connections.h"
#include "morseflow/errors.h"

using namespace morseflow;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

// body fills `detail` and returns whether the criterion holds.
void Criterion(int n, const std::string& name, const std::function<bool(std::ostringstream&)>& body) {
  std::ostringstream detail;
  bool ok = false;
  const auto t0 = Clock::now();
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail << " exception: " << e.what();
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!ok) ++failures;
  std::printf("%s %2d %s (%.2f s)%s\n", ok ? "PASS" : "FAIL", n, name.c_str(), secs, detail.str().c_str());
  std::fflush(stdout);
}

double Since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

KernelPair Kernels(int d) { return {exp_scalar_kernel(d, 1.0), exp_scalar_kernel(d, 2.0)}; }

std::shared_ptr<MemoryModel> Model(int d, double eps, double dt = 0.01) {
  return std::make_shared<MemoryModel>(quartic_potential(d), Kernels(d), eps, dt);
}

VectorXd Pt(double a, double b) {
  VectorXd v(2);
  v << a, b;
  return v;
}

int NodeAt(const std::vector<Equilibrium>& eqs, const VectorXd& x) {
  for (int i = 0; i < static_cast<int>(eqs.size()); ++i)
    if ((eqs[i].point - x).norm() < 0.1) return i;
  return -1;
}

IsolatingBlock BlockAt(const Potential& P, const KernelConstants& kc, const VectorXd& x,
                       std::vector<double> verify = {0.0, 1e-3}) {
  const auto eqs = find_equilibria(P, kc, 0.0, SearchBox::Cube(P.dim, 2.0));
  BlockOptions o;
  o.verify_eps = std::move(verify);
  const int i = NodeAt(eqs, x);
  if (i < 0) throw Error(ErrorCode::kInvalidArgument, "no equilibrium near the requested point");
  return build_block(eqs[i], eqs, P, kc, o);
}

double MaxResidual(double dt) {
  auto m = Model(1, 0.01, dt);
  const auto tr = integrate(m->rest_state(VectorXd::Constant(1, 0.5)), m, 10.0);
  double mx = 0.0;
  for (double r : energy_residual(tr, m->constants().C_A)) mx = std::max(mx, std::abs(r));
  return mx;
}

std::set<std::pair<int, int>> EdgeSet(const ConnectionGraph& g) {
  std::set<std::pair<int, int>> s;
  for (const auto& e : g.edges) s.insert({e.from, e.to});
  return s;
}

}  // namespace

int main() {
  Criterion(1, "kernel constants of the exponential pair", [](std::ostringstream& d) {
    const auto t0 = Clock::now();
    const auto kc = certify_kernels(exp_scalar_kernel(1, 1.0), exp_scalar_kernel(1, 2.0));
    const double secs = Since(t0);
    d << " C_A=" << kc.C_A << " D_A_bar=" << kc.D_A_bar;
    return std::abs(kc.C_A - 1.0) <= 1e-6 && std::abs(kc.D_A_bar - 1.0) <= 1e-6 && secs < 1.0;
  });

  Criterion(2, "energy inequality residual on T1", [](std::ostringstream& d) {
    const auto t0 = Clock::now();
    const double r1 = MaxResidual(1e-3);
    const double r2 = MaxResidual(5e-4);
    const double secs = Since(t0);
    d << " max residual " << r1 << " (dt=1e-3), " << r2 << " (dt=5e-4), ratio " << r1 / r2;
    return r1 <= 5e-3 && r1 / r2 >= 2.0 && secs < 5.0;
  });

  Criterion(3, "Lyapunov monotonicity on T2", [](std::ostringstream& d) {
    const auto t0 = Clock::now();
    auto m0 = Model(2, 0.0);
    const auto lb = lyapunov_budget(m0->potential(), m0->constants());
    const double E = 0.5 * lb.E0;
    const double eps = lb.eps0(E);
    auto m = m0->with_eps(eps);
    IntegrateOptions io;
    io.lyapunov_E = E;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    double worst = -1e300;
    for (int r = 0; r < 50; ++r) {
      const auto tr = integrate(m->rest_state(Pt(U(rng), U(rng))), m, 10.0, io);
      for (std::size_t k = 1; k < tr.lyapunov.size(); ++k) worst = std::max(worst, tr.lyapunov[k] - tr.lyapunov[k - 1]);
    }
    const double secs = Since(t0);
    d << " eps0=" << eps << " E=" << E << " max step increase " << worst;
    return worst <= 1e-6 && secs < 30.0;
  });

  Criterion(4, "T2 equilibria and perturbed branch", [](std::ostringstream& d) {
    const auto P = quartic_potential(2);
    const auto kc = certify_kernels(exp_scalar_kernel(2, 1.0), exp_scalar_kernel(2, 2.0));
    const auto e0 = find_equilibria(P, kc, 0.0, SearchBox::Cube(2, 2.0));
    int count[3] = {0, 0, 0};
    for (const auto& e : e0) {
      const int u = e.dims.unstable();
      if (u >= 0 && u <= 2) ++count[u];
    }
    const double eps = 0.01;
    const double r = std::sqrt(1.0 + eps / 2);
    const auto e1 = find_equilibria(P, kc, eps, SearchBox::Cube(2, 2.0));
    double err = 0.0;
    for (const auto& e : e1) {
      for (int k = 0; k < 2; ++k) {
        const double x = e.point(k);
        const double want = std::abs(x) < 0.5 ? 0.0 : std::copysign(r, x);
        err = std::max(err, std::abs(x - want));
      }
    }
    d << " n=" << e0.size() << " u-counts {2:" << count[2] << ", 1:" << count[1] << ", 0:" << count[0]
      << "} branch error " << err;
    return e0.size() == 9 && count[2] == 1 && count[1] == 4 && count[0] == 4 && e1.size() == 9 && err <= 1e-9;
  });

  Criterion(5, "block certificates at every T2 equilibrium", [](std::ostringstream& d) {
    const auto t0 = Clock::now();
    const auto P = quartic_potential(2);
    const auto kc = certify_kernels(exp_scalar_kernel(2, 1.0), exp_scalar_kernel(2, 2.0));
    const auto eqs = find_equilibria(P, kc, 0.0, SearchBox::Cube(2, 2.0));
    BlockOptions o;
    o.verify_eps = {0.0, 1e-3};
    double worst = 1e300;
    int cone_ok = 0;
    for (const auto& e : eqs) {
      const auto b = build_block(e, eqs, P, kc, o);
      for (double eps : {0.0, 1e-3}) {
        const auto m = verify_isolation(b, eps, P, kc, 2000);
        worst = std::min({worst, m.entry, m.exit, m.memory});
      }
      const double Eb = cone_certificate(b, 0.0, 1.0, P, kc).E_bound;
      cone_ok += cone_certificate(b, 0.0, 0.5 * Eb, P, kc).positive;
    }
    const double secs = Since(t0);
    d << " min slack " << worst << ", positive cones " << cone_ok << "/" << eqs.size();
    return eqs.size() == 9 && worst > 0 && cone_ok == 9 && secs < 60.0;
  });

  Criterion(6, "cone dynamics on the T2 source block", [](std::ostringstream& d) {
    const auto P = quartic_potential(2);
    const auto kc = certify_kernels(exp_scalar_kernel(2, 1.0), exp_scalar_kernel(2, 2.0));
    const auto b = BlockAt(P, kc, Pt(0, 0));
    const auto cb = parameterized_cone_budget(b, 0.0, kc, P);
    auto m = Model(2, 0.0);
    const auto r = verify_cone_dynamic(b, m, 0.0, 0.5 * cb.Delta, cb.E, cb.L0, 200, 0.5, 6);
    const double slack = std::min(r.min_derivative, r.min_form);
    d << " Delta=" << cb.Delta << " pairs " << r.pairs << " min slack " << slack;
    return r.pairs == 200 && slack > -1e-8;
  });

  // The saddle disks are shared by criteria 7, 8 and 10.
  const auto P2 = quartic_potential(2);
  const auto kc2 = certify_kernels(exp_scalar_kernel(2, 1.0), exp_scalar_kernel(2, 2.0));
  std::shared_ptr<MemoryModel> m2 = Model(2, 0.0);
  IsolatingBlock saddle;
  PreparedTransform pt;
  DiskFunction disk;
  ManifoldOptions mo;
  bool have_disk = false;
  try {
    saddle = BlockAt(P2, kc2, Pt(0, 1));
    pt = prepare_transform(saddle, m2);
    mo.L = pt.constants.L;
    disk = unstable_manifold(*pt.map, mo);
    have_disk = true;
  } catch (const std::exception& e) {
    std::printf("# saddle disk setup failed: %s\n", e.what());
  }

  Criterion(7, "graph-transform contraction on the T2 saddle (0,1)", [&](std::ostringstream& d) {
    if (!have_disk) return false;
    const double beta = pt.constants.beta;
    double ratio = 0.0;
    for (std::size_t k = 1; k < disk.changes.size(); ++k)
      if (disk.changes[k - 1] > 1e3 * mo.tol) ratio = std::max(ratio, disk.changes[k] / disk.changes[k - 1]);
    // Tangent at the center in ambient coordinates against the unstable eigenvector.
    const auto field = derivative_field(*pt.map, disk);
    const int c = disk.grid.size() / 2;
    VectorXd tloc(2);
    tloc << 1.0, field.slopes[c](0, 0);
    const VectorXd t = saddle.frame.T * tloc;
    Eigen::EigenSolver<MatrixXd> es(saddle.center.jacobian);
    int iu = 0;
    for (int k = 1; k < 2; ++k)
      if (es.eigenvalues()(k).real() > es.eigenvalues()(iu).real()) iu = k;
    const VectorXd v = es.eigenvectors().col(iu).real();
    const double slope_err = std::abs(t(1) / t(0) - v(1) / v(0));
    d << " beta=" << beta << " max ratio " << ratio << " slope error " << slope_err << " defect "
      << disk.invariance_defect;
    return beta < 1 && ratio <= 1.1 * beta && slope_err <= 1e-3 && disk.invariance_defect <= 2e-9;
  });

  Criterion(8, "fiber-contraction slopes against finite differences", [&](std::ostringstream& d) {
    if (!have_disk) return false;
    double worst = 0.0, bound = 0.0;
    for (double eps : {0.0, 1e-3}) {
      auto p = prepare_transform(saddle, m2->with_eps(eps));
      ManifoldOptions o;
      o.L = p.constants.L;
      const auto dk = unstable_manifold(*p.map, o);
      const auto f = derivative_field(*p.map, dk);
      const double h = dk.grid.h();
      const double mis = slope_fd_mismatch(*p.map, dk, f);
      bound = std::max(5 * h * h, 1e-5);
      worst = std::max(worst, mis / bound);
      d << " eps=" << eps << ": mismatch " << mis << " (bound " << bound << ")";
    }
    return worst <= 1.0;
  });

  Criterion(9, "variational equation against finite differences on T2", [](std::ostringstream& d) {
    auto m = Model(2, 0.01);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> N;
    const VectorXd x0 = Pt(0.35, -0.6);
    const double t = 1.0, h = 1e-5;
    const auto base = integrate(m->rest_state(x0), m, t);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const VectorXd w = Pt(N(rng), N(rng));
      const auto vs = integrate_variational(base, {w, HistoryFunction()}, 0.01);
      const auto moved = integrate(m->rest_state(x0 + h * w), m, t);
      const VectorXd fd = (moved.x.back() - base.x.back()) / h;
      worst = std::max(worst, (fd - vs.back().w).norm() / vs.back().w.norm());
    }
    d << " max relative error " << worst;
    return worst <= 1e-3;
  });

  Criterion(10, "eps-continuity of the unstable disk", [&](std::ostringstream& d) {
    if (!have_disk) return false;
    const auto rep = eps_continuity_report(saddle, m2, {1e-4, 2e-4, 4e-4, 8e-4}, pt.constants.L,
                                           pt.map->T(), mo);
    d << " value slope " << rep.value_slope << " slope-field slope " << rep.slope_slope;
    return rep.value_slope >= 0.9 && rep.slope_slope >= 0.9;
  });

  Criterion(11, "connection graph stability over eps", [](std::ostringstream& d) {
    const auto t0 = Clock::now();
    bool ok = true;
    const std::vector<double> eps_list{0.0, 1e-4, 1e-3, 5e-3};
    for (int dim : {1, 2}) {
      const auto P = quartic_potential(dim);
      const auto g0 = connection_graph(P, Kernels(dim), 0.0);
      if (dim == 1) {
        const int o = NodeAt(g0.nodes, VectorXd::Zero(1));
        const int p = NodeAt(g0.nodes, VectorXd::Ones(1));
        const int q = NodeAt(g0.nodes, -VectorXd::Ones(1));
        const std::set<std::pair<int, int>> want{{o, p}, {o, q}};
        ok = ok && EdgeSet(g0) == want;
      } else {
        ok = ok && g0.nodes.size() == 9 && g0.edges.size() == 16;
      }
      d << " T" << dim << ": " << g0.edges.size() << " edges";
      for (std::size_t k = 1; k < eps_list.size(); ++k) {
        const auto g = connection_graph(P, Kernels(dim), eps_list[k], GraphOptions{}, &g0);
        const auto c = compare_graphs(g0, g);
        double cf = 0.0;
        bool ball = true;
        for (const auto& e : g.edges) {
          cf = std::max(cf, e.result.contraction_factor);
          ball = ball && e.result.eta_norm < e.result.eta_radius;
        }
        ok = ok && c.isomorphic && cf < 1.0 && ball;
        d << " [eps=" << eps_list[k] << (c.isomorphic ? " identical" : " different") << " cf<=" << cf
          << (ball ? "" : " eta outside ball") << "]";
      }
    }
    const double secs = Since(t0);
    return ok && secs < 300.0;
  });

  Criterion(12, "negative controls", [](std::ostringstream& d) {
    const auto P = quartic_potential(2);
    ConnectionFinder f(P, Kernels(2), 0.0, GraphOptions{});
    const auto& eqs = f.equilibria();
    int tried = 0, no_entry = 0;
    for (int i = 0; i < static_cast<int>(eqs.size()); ++i) {
      if (eqs[i].dims.unstable() != 0) continue;
      for (int j = 0; j < static_cast<int>(eqs.size()); ++j) {
        if (eqs[j].dims.unstable() != 1) continue;
        ++tried;
        try {
          f.find_connection(i, j);
        } catch (const Error& e) {
          no_entry += e.code() == ErrorCode::kNoEntry;
        }
      }
    }
    const auto g0 = connection_graph(P, Kernels(2), 0.0);
    bool exact = true;
    for (std::size_t k = 0; k < g0.edges.size(); ++k) {
      auto g1 = g0;
      g1.edges.erase(g1.edges.begin() + k);
      const auto c = compare_graphs(g0, g1);
      const std::pair<int, int> gone{g0.edges[k].from, g0.edges[k].to};
      exact = exact && !c.isomorphic && c.missing.size() == 1 && c.missing[0] == gone && c.extra.empty();
    }
    d << " sink->saddle NoEntry " << no_entry << "/" << tried << ", single-edge deletions "
      << (exact ? "reported exactly" : "misreported");
    return tried == 16 && no_entry == tried && exact && !g0.edges.empty();
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
