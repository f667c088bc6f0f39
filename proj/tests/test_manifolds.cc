#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "morseflow/errors.h"
#include "morseflow/manifolds.h"

using namespace morseflow;

namespace {

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::kInvalidArgument;
}

KernelPair Kernels(int d, bool coupled = true) {
  return {exp_scalar_kernel(d, 1.0), coupled ? exp_scalar_kernel(d, 2.0) : zero_kernel(d, default_horizon(1.0))};
}

struct Rig {
  Potential P;
  KernelPair K;
  KernelConstants kc;
  std::shared_ptr<MemoryModel> model;
  IsolatingBlock block;
  Rig(Potential p, const VectorXd& center, bool coupled = true, std::vector<double> verify = {0.0, 1e-3})
      : P(std::move(p)), K(Kernels(P.dim, coupled)), kc(certify_kernels(K.A, K.M)),
        model(std::make_shared<MemoryModel>(P, K, 0.0, 0.01)) {
    const auto eqs = find_equilibria(P, kc, 0.0, SearchBox::Cube(P.dim, 2.0));
    BlockOptions o;
    o.verify_eps = std::move(verify);
    for (const auto& e : eqs)
      if ((e.point - center).norm() < 0.2) block = build_block(e, eqs, P, kc, o);
    EXPECT_GT(block.delta, 0.0);
  }
};

Potential LinearDiag() {
  MatrixXd J = MatrixXd::Zero(2, 2);
  J.diagonal() << 1, -2;
  return linear_field(J);
}

VectorXd Pt(double a, double b) {
  VectorXd v(2);
  v << a, b;
  return v;
}

// Per-step contraction ratios above the round-off floor.
double MaxStepRatio(const std::vector<double>& ch, double tol) {
  double r = 0.0;
  for (std::size_t k = 1; k < ch.size(); ++k)
    if (ch[k - 1] > 1e3 * tol) r = std::max(r, ch[k] / ch[k - 1]);
  return r;
}

}  // namespace

TEST(TimeTMap, EquilibriumFixedAtOneStep) {
  Rig s(quartic_potential(2), Pt(1, 0));
  for (double eps : {0.0, 1e-3}) {
    const auto m = s.model->with_eps(eps);
    const auto map = make_time_T_map(s.block, m, 0.01);
    EXPECT_EQ(map.steps(), 1);
    // Root of the discretized field: the map's coupling uses the step-grid quadrature.
    VectorXd x = s.block.center.point;
    for (int it = 0; it < 20; ++it) x -= m->field_jacobian(x).lu().solve(m->field(x));
    const LocalPoint img = map(LocalPoint{s.block.to_local(x), HistoryFunction()});
    EXPECT_LE((s.block.to_global(img.y) - x).norm(), 1e-10);
  }
}

TEST(TimeTMap, LinearFlow) {
  Rig s(LinearDiag(), Pt(0, 0), false);
  const auto map = make_time_T_map(s.block, s.model, 1.0);
  EXPECT_FALSE(map.memory());
  const LocalPoint img = map(LocalPoint{Pt(0.01, 0.02), HistoryFunction()});
  EXPECT_NEAR(img.y(0), 0.01 * std::exp(1.0), 1e-6 * 0.01);
  EXPECT_NEAR(img.y(1), 0.02 * std::exp(-2.0), 1e-6 * 0.02);
}

TEST(TimeTMap, DerivativeMatchesFiniteDifference) {
  Rig s(quartic_potential(2), Pt(1, 0));
  const auto map = make_time_T_map(s.block, s.model->with_eps(1e-3), 1.0);
  EXPECT_TRUE(map.memory());
  const LocalPoint p{Pt(0.02, -0.01), HistoryFunction()};
  const auto D = map.derivative(p, {{Pt(1, 0), HistoryFunction()}, {Pt(0, 1), HistoryFunction()}});
  const double h = 1e-6;
  for (int k = 0; k < 2; ++k) {
    LocalPoint a = p, b = p;
    a.y(k) += h;
    b.y(k) -= h;
    const VectorXd fd = (map(a).y - map(b).y) / (2 * h);
    EXPECT_LE((fd - D[k].w).norm() / D[k].w.norm(), 1e-4);
  }
}

TEST(TransformConstants, LinearClosedForm) {
  Rig s(LinearDiag(), Pt(0, 0), false);
  for (double T : {1.0, 0.1}) {
    const auto map = make_time_T_map(s.block, s.model, T);
    const auto c = transform_constants(map, 1.0);
    EXPECT_NEAR(c.xi, std::exp(T), 1e-6);
    EXPECT_NEAR(c.xi1, std::exp(T), 1e-6);
    EXPECT_NEAR(c.mu1, std::exp(-2 * T), 1e-6);
    EXPECT_NEAR(c.beta, std::exp(-2 * T), 1e-6);
    EXPECT_NEAR(c.mu, std::exp(-2 * T), 1e-6);
    EXPECT_EQ(c.n_xy, 0.0);
    EXPECT_EQ(c.n_yx, 0.0);
    EXPECT_TRUE(c.violated().empty());
    EXPECT_FALSE(c.eta_probed);
  }
}

TEST(TransformConstants, ExactCombination) {
  Rig s(quartic_potential(2), Pt(1, 0));
  const auto map = make_time_T_map(s.block, s.model->with_eps(1e-3), 1.0);
  const double L = 8.0;
  const auto c = transform_constants(map, L, 32, true);
  EXPECT_DOUBLE_EQ(c.xi, c.m_xx - L * c.n_xy);
  EXPECT_DOUBLE_EQ(c.mu, c.n_yx / L + c.n_yy);
  EXPECT_DOUBLE_EQ(c.beta, c.mu / c.xi * L * c.n_xy + c.n_yy);
  EXPECT_DOUBLE_EQ(c.xi1, c.m_xx - c.n_yx / L);
  EXPECT_DOUBLE_EQ(c.mu1, c.n_yy + L * c.n_xy);
  EXPECT_TRUE(c.eta_probed);
}

TEST(TransformConstants, CouplingEventuallyViolates) {
  Rig s(quartic_potential(2), Pt(1, 0));
  double last = -1;
  bool violated = false;
  for (double eps : {0.0, 0.1, 0.5, 2.0, 8.0, 32.0}) {
    const auto map = make_time_T_map(s.block, s.model->with_eps(eps), 1.0);
    const auto c = transform_constants(map, 8.0, 16, true);
    EXPECT_GE(c.n_xy, last);
    last = c.n_xy;
    if (!c.violated().empty()) {
      violated = true;
      EXPECT_EQ(CodeOf([&] { transform_constants(map, 8.0, 16); }), ErrorCode::kBoundsViolated);
      break;
    }
  }
  EXPECT_TRUE(violated);
}

TEST(Unstable, LinearIsFlat) {
  Rig s(LinearDiag(), Pt(0, 0), false);
  const auto map = make_time_T_map(s.block, s.model, 1.0);
  const auto d = unstable_manifold(map);
  EXPECT_LE(d.iterations, 2);
  for (const auto& v : d.values) EXPECT_LE(v.norm(), 1e-12);
  const auto f = derivative_field(map, d);
  for (const auto& m : f.slopes) EXPECT_LE(m.norm(), 1e-12);
}

TEST(Unstable, T1SourceMemoryFiber) {
  // At eps = 0 the memory along the unstable manifold is eta(s) = phi_{-s}(x) - x,
  // with phi the flow of x' = x - x^3: phi_{-s}(x) = x / sqrt(x^2 + (1 - x^2) e^{2s}).
  Rig s(quartic_potential(1), VectorXd::Zero(1));
  auto pt = prepare_transform(s.block, s.model);
  const auto& map = *pt.map;
  EXPECT_TRUE(map.memory());
  ManifoldOptions mo;
  mo.L = pt.constants.L;
  const auto d = unstable_manifold(map, mo);
  EXPECT_EQ(d.fiber_dim, 0);
  ASSERT_EQ(d.eta.size(), static_cast<std::size_t>(d.grid.size()));
  const double dt = s.model->dt();
  auto oracle = [&](double x) {
    return HistoryFunction::Sample(1, s.model->nodes(), dt, [&](double t) {
      return VectorXd::Constant(1, x / std::sqrt(x * x + (1 - x * x) * std::exp(2 * t)) - x);
    });
  };
  double worst = 0.0, scale = 0.0;
  for (int n = 0; n < d.grid.size(); ++n) {
    const double x = d.grid.node(n)(0);
    HistoryFunction diff = oracle(x);
    scale = std::max(scale, std::sqrt(map.eta_norm_sq(diff)));
    diff.values -= d.eta[n].values;
    worst = std::max(worst, std::sqrt(map.eta_norm_sq(diff)));
  }
  EXPECT_GT(scale, 0.05);
  EXPECT_LE(worst, 1e-3 * scale);
  // d eta / dx at the source is e^{-s} - 1.
  const auto f = derivative_field(map, d);
  const int c = d.grid.size() / 2;
  const auto want = HistoryFunction::Sample(1, s.model->nodes(), dt, [](double t) { return VectorXd::Constant(1, std::exp(-t) - 1); });
  HistoryFunction diff = want;
  diff.values -= f.eta_slopes[c][0].values;
  EXPECT_LE(std::sqrt(map.eta_norm_sq(diff)), 1e-3 * std::sqrt(map.eta_norm_sq(want)));
}

TEST(Unstable, T2SaddleTangency) {
  Rig s(quartic_potential(2, 1.0, 1.0, 0.1), Pt(0, 1));
  auto pt = prepare_transform(s.block, s.model);
  ManifoldOptions mo;
  mo.L = pt.constants.L;
  const auto d = unstable_manifold(*pt.map, mo);
  EXPECT_LE(d.lip_estimate, d.L_bound);
  const int c = d.grid.size() / 2;
  ASSERT_NEAR(d.grid.node(c).norm(), 0.0, 1e-15);
  const double fd = (d.values[c + 1] - d.values[c - 1]).norm() / (2 * d.grid.h());
  EXPECT_LE(fd, 1e-3);
  const auto f = derivative_field(*pt.map, d);
  EXPECT_LE(f.slopes[c].norm(), 1e-6);
  EXPECT_LE(slope_fd_mismatch(*pt.map, d, f), std::max(5 * d.grid.h() * d.grid.h(), 1e-5));
  for (const auto& m : f.slopes) EXPECT_LE(m.norm(), d.L_bound);
  // Away from the center the disk is curved.
  EXPECT_GT(d.values.front().norm(), 1e-5);
}

TEST(Unstable, Properties) {
  Rig s(quartic_potential(2, 1.0, 1.0, 0.1), Pt(0, 1));
  auto pt = prepare_transform(s.block, s.model->with_eps(1e-3));
  const auto& map = *pt.map;
  ManifoldOptions mo;
  mo.L = pt.constants.L;
  const auto d = unstable_manifold(map, mo);
  EXPECT_LE(d.invariance_defect, 2 * mo.tol);
  EXPECT_LE(MaxStepRatio(d.changes, mo.tol), 1.1 * pt.constants.beta);

  ManifoldOptions mo2 = mo;
  mo2.seed_offset = VectorXd::Constant(1, 0.5 * s.block.delta);
  const auto d2 = unstable_manifold(map, mo2);
  EXPECT_LE(disk_distance(map, d, d2), 2 * mo.tol);

  // Backward orbits: solve f_u(x_bar, h(x_bar)) = x by bisection and repeat.
  // The limit is the eps-shifted equilibrium, found on the discretized field.
  const auto m = map.model_ptr();
  VectorXd e = s.block.center.point;
  for (int it = 0; it < 20; ++it) e -= m->field_jacobian(e).lu().solve(m->field(e));
  const double e_u = s.block.to_local(e)(0);
  EXPECT_GT(std::abs(e_u), 0.0);
  for (double x0 : {-0.9, -0.4, 0.3, 0.8}) {
    double x = x0 * s.block.delta;
    for (int k = 0; k < 12; ++k) {
      auto g = [&](double z) {
        VectorXd b = VectorXd::Constant(1, z);
        LocalPoint p;
        p.y = Pt(z, d.value_at(b)(0));
        p.eta = d.eta_at(b);
        return map(p).y(0) - x;
      };
      double lo = -s.block.delta, hi = s.block.delta;
      ASSERT_LT(g(lo) * g(hi), 0.0);
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(lo) * g(mid) <= 0 ? hi : lo) = mid;
      }
      x = 0.5 * (lo + hi);
    }
    EXPECT_LE(std::abs(x - e_u), 1e-4 * s.block.delta);
  }

  // Graph points lie in each other's positive cones.
  const double E = s.block.cone.E;
  for (int i = 0; i < d.grid.size(); i += 3) {
    for (int j = i + 1; j < d.grid.size(); j += 2) {
      const double du = (d.grid.node(i) - d.grid.node(j)).squaredNorm();
      const double ds = (d.values[i] - d.values[j]).squaredNorm();
      HistoryFunction de = d.eta[i];
      de.values -= d.eta[j].values;
      EXPECT_GT(du - ds - E * map.eta_norm_sq(de), 0.0);
    }
  }
}

TEST(Stable, LinearIsFlat) {
  Rig s(LinearDiag(), Pt(0, 0), false);
  const auto map = make_time_T_map(s.block, s.model, 1.0);
  const auto v = stable_manifold(map);
  for (const auto& x : v.values) EXPECT_LE(x.norm(), 1e-12);
  EXPECT_LE(v.lip_estimate, 1.0 / v.L_bound);
}

TEST(Stable, SinkIsWholeBlock) {
  Rig s(quartic_potential(1), VectorXd::Ones(1));
  auto map = make_time_T_map(s.block, s.model, 1.0);
  const auto v = stable_manifold(map);
  EXPECT_EQ(v.fiber_dim, 0);
  EXPECT_EQ(v.grid.r, s.block.delta);
  for (const auto& x : v.values) EXPECT_EQ(x.size(), 0);
}

TEST(Stable, T2SaddleTangencyAndForwardOrbits) {
  Rig s(quartic_potential(2, 1.0, 1.0, 0.1), Pt(0, 1));
  auto pt = prepare_transform(s.block, s.model->with_eps(1e-3));
  const auto& map = *pt.map;
  ManifoldOptions mo;
  mo.L = pt.constants.L;
  const auto v = stable_manifold(map, mo);
  EXPECT_LE(v.lip_estimate, 1.0 / v.L_bound);
  EXPECT_LE(v.invariance_defect, 2 * mo.tol);
  EXPECT_LE(MaxStepRatio(v.changes, mo.tol), 1.1 / pt.constants.xi1);
  const int P = v.n_probes();
  const int c = v.grid.size() / 2;
  const double slope = (v.values[(c + 1) * P] - v.values[(c - 1) * P]).norm() / (2 * v.grid.h());
  EXPECT_LE(slope, 2e-3);

}

TEST(Stable, ForwardOrbits) {
  // Off the probe span the image memory is not seen by the vertical disk, so
  // at eps > 0 graph points carry an O(eps) offset along the unstable
  // direction and the orbit only passes close to the equilibrium.
  Rig s(quartic_potential(2, 1.0, 1.0, 0.1), Pt(0, 1));
  for (double eps : {0.0, 1e-3}) {
    const auto m = s.model->with_eps(eps);
    auto pt = prepare_transform(s.block, m);
    ManifoldOptions mo;
    mo.L = pt.constants.L;
    const auto v = stable_manifold(*pt.map, mo);
    const int P = v.n_probes();
    VectorXd target = s.block.center.point;
    for (int it = 0; it < 20; ++it) target -= m->field_jacobian(target).lu().solve(m->field(target));
    for (int n = 0; n < v.grid.size(); n += 4) {
      VectorXd y(2);
      y << v.values[n * P](0), v.grid.node(n)(0);
      DelayIntegrator in(*m, m->rest_state(s.block.to_global(y)));
      bool inside = true;
      double closest = 1e300;
      for (int k = 0; k < 500; ++k) {
        in.step();
        if (!s.block.contains_local(s.block.to_local(in.value()), 1.0 + 1e-6, 1.0 + 1e-6)) inside = false;
        closest = std::min(closest, (in.value() - target).norm());
      }
      EXPECT_TRUE(inside) << eps << " " << n;
      if (eps == 0.0) {
        EXPECT_LE((in.value() - target).norm(), 2e-5) << n;
      } else {
        EXPECT_LE(closest, 3e-3 * s.block.delta) << n;
      }
    }
  }
}

TEST(EpsContinuity, ZeroListIsZero) {
  Rig s(quartic_potential(2), Pt(0, 1));
  const auto rep = eps_continuity_report(s.block, s.model, {0.0}, 8.0, 1.0);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].value_distance, 0.0);
  EXPECT_EQ(rep.rows[0].slope_distance, 0.0);
}

TEST(EpsContinuity, LinearScaling) {
  Rig s(quartic_potential(2), Pt(0, 1));
  auto pt = prepare_transform(s.block, s.model);
  const std::vector<double> eps{1e-4, 2e-4, 4e-4, 8e-4};
  const auto rep = eps_continuity_report(s.block, s.model, eps, pt.constants.L, pt.map->T());
  ASSERT_EQ(rep.rows.size(), eps.size());
  for (std::size_t i = 1; i < eps.size(); ++i) {
    const double rv = (rep.rows[i].value_distance / eps[i]) / (rep.rows[0].value_distance / eps[0]);
    const double rs = (rep.rows[i].slope_distance / eps[i]) / (rep.rows[0].slope_distance / eps[0]);
    EXPECT_GE(rv, 0.5);
    EXPECT_LE(rv, 2.0);
    EXPECT_GE(rs, 0.5);
    EXPECT_LE(rs, 2.0);
  }
  EXPECT_GE(rep.value_slope, 0.9);
  EXPECT_GE(rep.slope_slope, 0.9);
}
