#include <algorithm>
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "morseflow/equilibria.h"
#include "morseflow/errors.h"

using namespace morseflow;

namespace {

KernelConstants Coupled(int d) { return certify_kernels(exp_scalar_kernel(d, 1.0), exp_scalar_kernel(d, 2.0)); }

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::kInvalidArgument;
}

void CheckInvariants(const Equilibrium& e, const Potential& P, const KernelConstants& kc, int d) {
  EXPECT_LE(e.residual, 1e-10 * (1 + e.point.norm()));
  EXPECT_NEAR(perturbed_field(P, kc.M_total, e.eps, e.point).norm(), e.residual, 1e-14);
  EXPECT_EQ(e.dims.unstable() + e.dims.stable(), d);
  for (int i = 0; i < e.spectrum.size(); ++i) EXPECT_GE(std::abs(e.spectrum(i).real()), 1e-6);
}

}  // namespace

TEST(FindEquilibria, T1) {
  const auto P = quartic_potential(1);
  const auto kc = Coupled(1);
  const auto eqs = find_equilibria(P, kc, 0.0, SearchBox::Cube(1, 2.0));
  ASSERT_EQ(eqs.size(), 3u);
  std::map<int, Dims> got;
  for (const auto& e : eqs) {
    CheckInvariants(e, P, kc, 1);
    got[static_cast<int>(std::lround(e.point(0)))] = e.dims;
    EXPECT_NEAR(e.point(0), std::round(e.point(0)), 1e-12);
  }
  EXPECT_EQ(got[0], (Dims{1, 0, 0, 0}));
  EXPECT_EQ(got[1], (Dims{0, 0, 1, 0}));
  EXPECT_EQ(got[-1], (Dims{0, 0, 1, 0}));
  EXPECT_NEAR(eqs[0].point(0), 0.0, 1e-12);  // unstable dimension first
  EXPECT_NEAR(eqs[0].spectrum(0).real(), 1.0, 1e-12);
  EXPECT_NEAR(eqs[1].spectrum(0).real(), -2.0, 1e-12);
}

TEST(FindEquilibria, T2ProductStructure) {
  const auto P = quartic_potential(2);
  const auto kc = Coupled(2);
  const auto eqs = find_equilibria(P, kc, 0.0, SearchBox::Cube(2, 2.0));
  ASSERT_EQ(eqs.size(), 9u);
  std::map<int, int> count;
  for (const auto& e : eqs) {
    CheckInvariants(e, P, kc, 2);
    int nz = 0;
    for (int i = 0; i < 2; ++i) {
      EXPECT_NEAR(std::abs(e.point(i)), std::round(std::abs(e.point(i))), 1e-12);
      nz += std::abs(e.point(i)) > 0.5;
    }
    EXPECT_EQ(e.dims.u1, 2 - nz);
    EXPECT_EQ(e.dims.s1, nz);
    EXPECT_EQ(e.dims.u2 + e.dims.s2, 0);
    ++count[e.dims.u1];
  }
  EXPECT_EQ(count[2], 1);
  EXPECT_EQ(count[1], 4);
  EXPECT_EQ(count[0], 4);
  for (std::size_t i = 1; i < eqs.size(); ++i) EXPECT_GE(eqs[i - 1].dims.u1, eqs[i].dims.u1);
}

TEST(FindEquilibria, T1PerturbedClosedForm) {
  const auto P = quartic_potential(1);
  const auto kc = Coupled(1);
  const auto eqs = find_equilibria(P, kc, 0.01, SearchBox::Cube(1, 2.0));
  ASSERT_EQ(eqs.size(), 3u);
  // kc.M_total is the certified quadrature of int e^{-2s} = 1/2.
  const double w = kc.M_total(0, 0);
  EXPECT_NEAR(w, 0.5, 1e-9);
  std::vector<double> pts;
  for (const auto& e : eqs) pts.push_back(e.point(0));
  std::sort(pts.begin(), pts.end());
  EXPECT_NEAR(pts[0], -std::sqrt(1 + 0.01 * w), 1e-12);
  EXPECT_NEAR(pts[1], 0.0, 1e-14);
  EXPECT_NEAR(pts[2], std::sqrt(1 + 0.01 * w), 1e-12);
  EXPECT_NEAR(pts[2], std::sqrt(1.005), 1e-9);
}

TEST(FindEquilibria, NoDuplicatesWithDenseGrid) {
  const auto P = quartic_potential(2);
  EquilibriumOptions opt;
  opt.grid_density = 31;
  const auto eqs = find_equilibria(P, Coupled(2), 0.005, SearchBox::Cube(2, 2.5), opt);
  ASSERT_EQ(eqs.size(), 9u);
  for (std::size_t i = 0; i < eqs.size(); ++i)
    for (std::size_t j = i + 1; j < eqs.size(); ++j) EXPECT_GT((eqs[i].point - eqs[j].point).norm(), 1e-8);
}

TEST(Classify, ComplexPairs) {
  // Non-gradient field: a rotation with expansion in the plane and contraction
  // along the third axis, plus a focus in the last two.
  MatrixXd J = MatrixXd::Zero(5, 5);
  J.block(0, 0, 2, 2) << 0.5, -2.0, 2.0, 0.5;
  J(2, 2) = -1.0;
  J.block(3, 3, 2, 2) << -0.3, 1.0, -1.0, -0.3;
  Eigen::VectorXcd spec;
  Dims dims;
  classify(J, 1e-6, &spec, &dims);
  EXPECT_EQ(dims, (Dims{0, 1, 1, 1}));
  ASSERT_EQ(spec.size(), 5);
  EXPECT_NEAR(spec(0).real(), 0.5, 1e-12);
  EXPECT_NEAR(std::abs(spec(0).imag()), 2.0, 1e-12);
  EXPECT_NEAR(spec(2).real(), -1.0, 1e-12);
  EXPECT_NEAR(spec(3).real(), -0.3, 1e-12);
  EXPECT_NEAR(std::abs(spec(3).imag()), 1.0, 1e-12);
}

TEST(Classify, NonGradientFieldEquilibrium) {
  MatrixXd J(2, 2);
  J << 0.2, -1.0, 1.0, 0.2;
  const auto P = linear_field(J);
  const auto kc = certify_kernels(exp_scalar_kernel(2, 1.0), zero_kernel(2, 30.0));
  const auto eqs = find_equilibria(P, kc, 0.0, SearchBox::Cube(2, 1.0));
  ASSERT_EQ(eqs.size(), 1u);
  EXPECT_EQ(eqs[0].dims, (Dims{0, 1, 0, 0}));
  EXPECT_NEAR(eqs[0].point.norm(), 0.0, 1e-14);
}

TEST(Classify, NonHyperbolic) {
  MatrixXd J = MatrixXd::Zero(2, 2);
  J(0, 0) = 1.0;
  J(1, 1) = 5e-7;
  Eigen::VectorXcd spec;
  Dims dims;
  EXPECT_EQ(CodeOf([&] { classify(J, 1e-6, &spec, &dims); }), ErrorCode::kNonHyperbolic);
  J(1, 1) = 0.0;
  const auto P = linear_field(J);
  const auto kc = certify_kernels(exp_scalar_kernel(2, 1.0), zero_kernel(2, 30.0));
  EXPECT_EQ(CodeOf([&] { find_equilibria(P, kc, 0.0, SearchBox::Cube(2, 1.0)); }), ErrorCode::kNonHyperbolic);
}

TEST(ContinueBranch, T1Sink) {
  const auto P = quartic_potential(1);
  const auto kc = Coupled(1);
  const auto e0 = make_equilibrium(P, kc, 0.0, VectorXd::Ones(1));
  const std::vector<double> eps{0.0, 0.005, 0.01};
  const auto br = continue_branch(e0, eps, P, kc);
  ASSERT_EQ(br.size(), 3u);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    EXPECT_DOUBLE_EQ(br[i].eps, eps[i]);
    EXPECT_NEAR(br[i].point(0), std::sqrt(1 + eps[i] * kc.M_total(0, 0)), 1e-10);
    EXPECT_NEAR(br[i].point(0), std::sqrt(1 + eps[i] / 2), 1e-10);
    EXPECT_EQ(br[i].dims, e0.dims);
  }
}

TEST(ContinueBranch, OriginFixed) {
  const auto P = quartic_potential(1);
  const auto kc = Coupled(1);
  const auto e0 = make_equilibrium(P, kc, 0.0, VectorXd::Zero(1));
  for (const auto& e : continue_branch(e0, {0.0, 0.005, 0.01, 0.02}, P, kc)) EXPECT_EQ(e.point(0), 0.0);
}

TEST(ContinueBranch, T2CornerAndDrift) {
  const auto P = quartic_potential(2);
  const auto kc = Coupled(2);
  const auto e0 = make_equilibrium(P, kc, 0.0, VectorXd::Ones(2));
  std::vector<double> eps;
  for (int i = 0; i <= 10; ++i) eps.push_back(0.002 * i);
  const auto br = continue_branch(e0, eps, P, kc, [](const VectorXd& x) { return (x - VectorXd::Ones(2)).norm() < 0.3; });
  double C = 0.0;
  for (std::size_t i = 0; i < br.size(); ++i) {
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(br[i].point(k), std::sqrt(1 + eps[i] / 2), 1e-9);
    if (eps[i] > 0) C = std::max(C, (br[i].point - e0.point).norm() / eps[i]);
  }
  // d/d eps sqrt(1 + eps/2) at 0 is 1/4 per coordinate.
  EXPECT_TRUE(std::isfinite(C));
  EXPECT_NEAR(C, std::sqrt(2.0) / 4, 0.01);
}

TEST(ContinueBranch, LeftBlock) {
  const auto P = quartic_potential(1);
  const auto kc = Coupled(1);
  const auto e0 = make_equilibrium(P, kc, 0.0, VectorXd::Ones(1));
  auto inside = [](const VectorXd& x) { return std::abs(x(0) - 1.0) < 0.01; };
  EXPECT_NO_THROW(continue_branch(e0, {0.0, 0.01}, P, kc, inside));
  EXPECT_EQ(CodeOf([&] { continue_branch(e0, {0.0, 0.01, 0.1}, P, kc, inside); }), ErrorCode::kLeftBlock);
}

TEST(ContinueBranch, DimChange) {
  // f^eps = (-1/2 + eps/2) x crosses zero at eps = 1.
  const auto P = linear_field(-0.5 * MatrixXd::Identity(1, 1));
  const auto kc = Coupled(1);
  const auto e0 = make_equilibrium(P, kc, 0.0, VectorXd::Zero(1));
  EXPECT_EQ(CodeOf([&] { continue_branch(e0, {0.0, 0.5, 1.5}, P, kc); }), ErrorCode::kDimChange);
}

TEST(Equilibria, NoSpuriousRootsBelowEps0) {
  // Every root at small eps lies near an eps = 0 root.
  const auto P = quartic_potential(2);
  const auto kc = Coupled(2);
  const auto base = find_equilibria(P, kc, 0.0, SearchBox::Cube(2, 2.0));
  for (double eps : {0.001, 0.01, 0.05}) {
    const auto eqs = find_equilibria(P, kc, eps, SearchBox::Cube(2, 2.0));
    EXPECT_EQ(eqs.size(), base.size());
    for (const auto& e : eqs) {
      double best = 1e300;
      for (const auto& b : base) best = std::min(best, (b.point - e.point).norm());
      EXPECT_LT(best, eps);
    }
  }
}
