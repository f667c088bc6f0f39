#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "morseflow/connections.h"
#include "morseflow/errors.h"

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

KernelPair Kernels(int d) { return {exp_scalar_kernel(d, 1.0), exp_scalar_kernel(d, 2.0)}; }

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

EmbeddedDisk CurveDisk(const std::function<VectorXd(double)>& g, int n, double r) {
  EmbeddedDisk d;
  for (int i = 0; i < n; ++i) {
    const double t = -r + 2 * r * i / (n - 1);
    DiskSample s;
    s.base = VectorXd::Constant(1, t);
    s.x = g(t);
    s.tangent = (g(t + 1e-6) - g(t - 1e-6)) / 2e-6;
    d.samples.push_back(s);
  }
  return d;
}

}  // namespace

TEST(Reparametrize, PlaneIsExact) {
  EmbeddedDisk d;
  Eigen::Vector3d t1(1, 0, 0.3), t2(0, 1, 0.2);
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j) {
      DiskSample s;
      s.base = Pt(0.1 * i, 0.1 * j);
      s.x = 0.1 * i * t1 + 0.1 * j * t2;
      d.samples.push_back(s);
    }
  MatrixXd F(3, 3);
  F.col(0) = t1;
  F.col(1) = t2;
  F.col(2) = t1.cross(t2).normalized();
  for (double r : {0.4, 0.1}) {
    const auto g = reparametrize_over_tangent(d, F, Eigen::Vector3d::Zero(), 0.01, r);
    EXPECT_LE(g.lip_estimate, 1e-12);
    EXPECT_LE(g.delta2, 1e-12);
    EXPECT_EQ(g.delta1, r);
  }
}

TEST(Reparametrize, QuadraticShrinks) {
  const auto d = CurveDisk([](double t) { return Pt(t, t * t); }, 401, 0.5);
  const auto g = reparametrize_over_tangent(d, MatrixXd::Identity(2, 2), Pt(0, 0), 0.1, 0.5);
  EXPECT_LE(g.delta1, 0.05);
  EXPECT_LE(g.lip_estimate, 0.1);
  // Chord slopes of y = x^2 on the grid reach 2r - h.
  EXPECT_NEAR(g.lip_estimate, 2 * g.delta1 - g.grid.h(), 1e-9);
  for (int n = 0; n < g.grid.size(); ++n) {
    const double x = g.grid.node(n)(0);
    EXPECT_NEAR(g.values[n](0), x * x, 1e-10);
  }
  // Halving the box decreases the estimate.
  const auto h = reparametrize_over_tangent(d, MatrixXd::Identity(2, 2), Pt(0, 0), 0.1, 0.5 * g.delta1);
  EXPECT_LT(h.lip_estimate, g.lip_estimate);
}

TEST(Reparametrize, RotatedQuadratic) {
  const double a = M_PI / 6;
  Eigen::Matrix2d Rm;
  Rm << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  const VectorXd z0 = Pt(0.3, -0.2);
  const auto d = CurveDisk([&](double t) { return VectorXd(z0 + Rm * Pt(t, t * t)); }, 401, 0.5);
  const auto g = reparametrize_over_tangent(d, Rm, z0, 0.1, 0.5);
  const auto ref = reparametrize_over_tangent(CurveDisk([](double t) { return Pt(t, t * t); }, 401, 0.5),
                                              MatrixXd::Identity(2, 2), Pt(0, 0), 0.1, 0.5);
  EXPECT_EQ(g.delta1, ref.delta1);
  for (int n = 0; n < g.grid.size(); ++n) EXPECT_NEAR(g.values[n](0), ref.values[n](0), 1e-10);
}

TEST(Reparametrize, Errors) {
  const auto d = CurveDisk([](double t) { return Pt(t, t * t); }, 3, 0.5);
  EXPECT_EQ(CodeOf([&] { reparametrize_over_tangent(d, MatrixXd::Identity(2, 2), Pt(0, 0), 0.1, 0.001); }),
            ErrorCode::kInsufficientSamples);
  // A corner stays steep at every scale.
  const auto k = CurveDisk([](double t) { return Pt(t, 2 * std::abs(t)); }, 2001, 0.5);
  EXPECT_EQ(CodeOf([&] { reparametrize_over_tangent(k, MatrixXd::Identity(2, 2), Pt(0, 0), 0.1, 0.5, 1e-3); }),
            ErrorCode::kLipschitzUnreachable);
}

TEST(Transport, ZeroTimeIsIdentity) {
  auto m = std::make_shared<MemoryModel>(quartic_potential(2), Kernels(2), 1e-3, 0.01);
  const auto d = CurveDisk([](double t) { return Pt(0.5 + t, 0.2 * t); }, 11, 0.1);
  const auto e = transport_disk(d, *m, 0.0);
  ASSERT_EQ(e.samples.size(), d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) EXPECT_EQ((e.samples[i].x - d.samples[i].x).norm(), 0.0);
}

TEST(Transport, LinearFlow) {
  MatrixXd J = MatrixXd::Zero(2, 2);
  J.diagonal() << 1, -2;
  auto m = std::make_shared<MemoryModel>(linear_field(J), KernelPair{exp_scalar_kernel(2, 1.0), zero_kernel(2, 30.0)}, 0.0, 0.01);
  const auto d = CurveDisk([](double t) { return Pt(t, 0.0); }, 11, 0.1);
  const auto e = transport_disk(d, *m, 1.0);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    EXPECT_NEAR(e.samples[i].x(0), std::exp(1.0) * d.samples[i].x(0), 1e-9);
    EXPECT_NEAR(e.samples[i].x(1), 0.0, 1e-15);
    ASSERT_EQ(e.samples[i].tangent.cols(), 1);
    EXPECT_NEAR(std::abs(e.samples[i].tangent(0, 0)), 1.0, 1e-12);
    EXPECT_NEAR(e.samples[i].tangent(1, 0), 0.0, 1e-12);
  }
}

TEST(Transport, SourceDiskMemoryStaysInBall) {
  const auto P = quartic_potential(2);
  ConnectionFinder f(P, Kernels(2), 1e-3, GraphOptions{});
  const int src = NodeAt(f.equilibria(), Pt(0, 0));
  ASSERT_GE(src, 0);
  const double r = 0.5 * f.blocks()[src].delta;
  EmbeddedDisk d;
  for (int k = 0; k < 64; ++k) {
    const double a = 2 * M_PI * k / 64;
    DiskSample s;
    s.base = Pt(std::cos(a), std::sin(a));
    s.x = r * s.base;
    s.tangent = MatrixXd::Identity(2, 2);
    d.samples.push_back(s);
  }
  const auto e = transport_disk(d, *f.model(), 3.0);
  double Rmin = 1e300;
  for (const auto& b : f.blocks()) Rmin = std::min(Rmin, b.R);
  const double eta = e.max_eta_norm(*f.model());
  EXPECT_GT(eta, 0.0);
  EXPECT_LT(eta, Rmin);
  // Denser sampling does not raise the bound materially.
  EmbeddedDisk dd;
  for (int k = 0; k < 256; ++k) {
    const double a = 2 * M_PI * k / 256;
    DiskSample s;
    s.base = Pt(std::cos(a), std::sin(a));
    s.x = r * s.base;
    s.tangent = MatrixXd::Identity(2, 2);
    dd.samples.push_back(s);
  }
  EXPECT_LE(transport_disk(dd, *f.model(), 3.0).max_eta_norm(*f.model()), 1.05 * eta);
  // Samples approach the closure of the saddles' unstable manifolds: the axes
  // and the lines |x| = 1, |y| = 1.
  auto gap = [](const EmbeddedDisk& disk) {
    double worst = 0.0;
    for (const auto& s : disk.samples)
      worst = std::max(worst, std::min({std::abs(s.x(0)), std::abs(s.x(1)), std::abs(std::abs(s.x(0)) - 1),
                                        std::abs(std::abs(s.x(1)) - 1)}));
    return worst;
  };
  const auto late = transport_disk(d, *f.model(), 6.0);
  EXPECT_LT(gap(late), gap(e));
  EXPECT_LT(gap(late), 0.01);
}

TEST(IntersectionFrame, Examples) {
  const auto t1 = build_intersection_frame(MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), VectorXd::Zero(1));
  EXPECT_EQ(t1.k1, 0);
  EXPECT_EQ(t1.c, 1);
  EXPECT_EQ(t1.k2, 0);
  EXPECT_NEAR(std::abs(t1.M(0, 0)), 1.0, 1e-15);

  MatrixXd Ts(2, 1);
  Ts << 1, 0;
  const auto t2 = build_intersection_frame(MatrixXd::Identity(2, 2), Ts, Pt(0.05, 0.9));
  EXPECT_EQ(t2.k1, 1);
  EXPECT_EQ(t2.c, 1);
  EXPECT_EQ(t2.k2, 0);
  EXPECT_LT(t2.cond, 1e10);
  EXPECT_NEAR(std::abs(t2.M(0, 1)), 1.0, 1e-12);  // the common direction is the stable tangent
  EXPECT_NEAR(t2.margin, M_PI / 2, 1e-12);

  MatrixXd A(3, 2), B(3, 2);
  A << 1, 0, 0, 1, 0, 0;
  B << 1, 0, 0, 1, 0, 0;
  EXPECT_EQ(CodeOf([&] { build_intersection_frame(A, B, Eigen::Vector3d::Zero()); }), ErrorCode::kNotTransversal);
  EXPECT_EQ(CodeOf([&] { build_intersection_frame(Ts, Ts, Pt(0, 0)); }), ErrorCode::kNotTransversal);
}

TEST(FindConnection, T1) {
  const auto P = quartic_potential(1);
  ConnectionFinder f(P, Kernels(1), 0.0, GraphOptions{});
  const int src = NodeAt(f.equilibria(), VectorXd::Zero(1));
  const int snk = NodeAt(f.equilibria(), VectorXd::Ones(1));
  const auto r = f.find_connection(src, snk);
  EXPECT_TRUE(f.blocks()[snk].contains(r.point));
  EXPECT_GT(r.point(0), 0.0);
  EXPECT_LT(r.point(0), 1.0 + f.blocks()[snk].delta);
  EXPECT_EQ(r.frame.c, 1);
  EXPECT_EQ(CodeOf([&] { f.find_connection(snk, src); }), ErrorCode::kNoEntry);
}

TEST(FindConnection, T2EpsDrift) {
  const auto P = quartic_potential(2);
  ConnectionFinder f0(P, Kernels(2), 0.0, GraphOptions{});
  const int src = NodeAt(f0.equilibria(), Pt(0, 0));
  const int snk = NodeAt(f0.equilibria(), Pt(1, 1));
  const int sad = NodeAt(f0.equilibria(), Pt(0, 1));
  const auto r0 = f0.find_connection(src, snk);
  const auto s0 = f0.find_connection(src, sad);
  EXPECT_EQ(s0.frame.k1, 1);
  EXPECT_EQ(s0.frame.c, 1);
  EXPECT_EQ(s0.frame.k2, 0);
  // Into a sink the intersection near z is open, so the section has no free
  // coordinates and z itself is the fixed point. The saddle carries the drift.
  std::vector<double> dist;
  for (double eps : {1e-3, 5e-4}) {
    ConnectionFinder f(P, Kernels(2), eps, GraphOptions{});
    const int a = NodeAt(f.equilibria(), Pt(0, 0)), b = NodeAt(f.equilibria(), Pt(1, 1));
    const auto r = f.find_connection(a, b, &r0);
    EXPECT_LT(r.contraction_factor, 1.0);
    EXPECT_LT(r.eta_norm, r.eta_radius);
    EXPECT_DOUBLE_EQ(r.eps, eps);
    EXPECT_LE((r.point - r0.point).norm(), 1e-12);
    const auto s = f.find_connection(a, NodeAt(f.equilibria(), Pt(0, 1)), &s0);
    EXPECT_LT(s.contraction_factor, 1.0);
    EXPECT_LT(s.eta_norm, s.eta_radius);
    dist.push_back((s.point - s0.point).norm());
  }
  EXPECT_GT(dist[1], 0.0);
  EXPECT_LE(dist[0], 0.1 * 1e-3);  // O(eps)
  EXPECT_GE(dist[0] / dist[1], 1.0);
  EXPECT_LE(dist[0] / dist[1], 4.0);
}

TEST(Graph, T1) {
  const auto g = connection_graph(quartic_potential(1), Kernels(1), 0.0);
  ASSERT_EQ(g.nodes.size(), 3u);
  const int o = NodeAt(g.nodes, VectorXd::Zero(1)), p = NodeAt(g.nodes, VectorXd::Ones(1)),
            n = NodeAt(g.nodes, -VectorXd::Ones(1));
  EXPECT_EQ(g.edges.size(), 2u);
  EXPECT_TRUE(g.has_edge(o, p));
  EXPECT_TRUE(g.has_edge(o, n));
  EXPECT_FALSE(g.has_edge(p, o));
  const auto c = compare_graphs(g, g);
  EXPECT_TRUE(c.isomorphic);
  EXPECT_TRUE(c.closures_equal);
}

TEST(Graph, T2AndComparisons) {
  const auto P = quartic_potential(2);
  const auto g0 = connection_graph(P, Kernels(2), 0.0);
  ASSERT_EQ(g0.nodes.size(), 9u);
  EXPECT_EQ(g0.edges.size(), 16u);
  std::set<std::pair<int, int>> want;
  const int src = NodeAt(g0.nodes, Pt(0, 0));
  for (int i = 0; i < 9; ++i) {
    const auto& x = g0.nodes[i].point;
    const int u = g0.nodes[i].dims.unstable();
    if (u < 2) want.insert({src, i});
    if (u == 1) {
      for (int j = 0; j < 9; ++j) {
        const auto& y = g0.nodes[j].point;
        // Adjacent sinks share the saddle's nonzero coordinate.
        if (g0.nodes[j].dims.unstable() == 0 && (x - y).norm() < 1.0 + 1e-9) want.insert({i, j});
      }
    }
  }
  ASSERT_EQ(want.size(), 16u);
  for (const auto& e : g0.edges) {
    EXPECT_TRUE(want.count({e.from, e.to})) << e.from << "->" << e.to;
    EXPECT_NE(e.from, e.to);
    EXPECT_GT(g0.lyapunov[e.from], g0.lyapunov[e.to]);
  }
  // The eight remaining dimension-compatible pairs are saddle -> far sink.
  int no_entry = 0;
  for (const auto& a : g0.absent)
    if (a.second.find("NoEntry") != std::string::npos || a.second.find("no ") != std::string::npos) ++no_entry;
  EXPECT_GE(no_entry, 8);
  // Chains add no new pairs: source->sink edges already exist.
  EXPECT_EQ(transitive_closure(g0).size(), 16u);

  auto g1 = g0;
  const int k = g1.find_edge(src, NodeAt(g0.nodes, Pt(1, 1)));
  ASSERT_GE(k, 0);
  g1.edges.erase(g1.edges.begin() + k);
  const auto c = compare_graphs(g0, g1);
  EXPECT_FALSE(c.isomorphic);
  ASSERT_EQ(c.missing.size(), 1u);
  EXPECT_EQ(c.missing[0], std::make_pair(src, NodeAt(g0.nodes, Pt(1, 1))));
  EXPECT_TRUE(c.extra.empty());
  EXPECT_TRUE(c.closures_equal);  // the chain through a saddle still connects them

  const auto g5 = connection_graph(P, Kernels(2), 5e-3, GraphOptions{}, &g0);
  const auto c5 = compare_graphs(g0, g5);
  EXPECT_TRUE(c5.isomorphic);
  for (const auto& e : g5.edges) {
    EXPECT_LT(e.result.contraction_factor, 1.0);
    EXPECT_LT(e.result.eta_norm, e.result.eta_radius);
    EXPECT_GT(g5.lyapunov[e.from], g5.lyapunov[e.to]);
  }
}

TEST(Graph, AmbiguousMatching) {
  auto g = connection_graph(quartic_potential(1), Kernels(1), 0.0);
  auto h = g;
  h.nodes[1].point = h.nodes[0].point;
  EXPECT_EQ(CodeOf([&] { compare_graphs(g, h, 10.0); }), ErrorCode::kAmbiguousMatching);
}
