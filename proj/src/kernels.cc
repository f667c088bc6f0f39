#include "morseflow/kernels.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "morseflow/errors.h"

namespace morseflow {

namespace {

constexpr double kSymTol = 1e-12;

MatrixXd Symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// Composite Simpson on n (odd) uniform points over [0, b].
template <typename T, typename Fn>
T Simpson(double b, int n, const Fn& fn, T zero) {
  if (n % 2 == 0) ++n;
  const double h = b / (n - 1);
  T acc = zero;
  for (int i = 0; i < n; ++i) {
    const double w = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    acc = acc + w * fn(i * h);
  }
  return acc * (h / 3.0);
}

int SampleCount(double s_max, int density, int n_quad) {
  const double n = std::ceil(std::max(1, density) * s_max) + 1.0;
  int count = static_cast<int>(std::min(n, 2.0e6));
  count = std::max({count, n_quad, 3});
  return count % 2 == 0 ? count + 1 : count;
}

void CheckGrid(const HistoryFunction& eta, const KernelSpec& k) {
  if (eta.size() != eta.values.cols()) {
    throw Error(ErrorCode::kGridMismatch, "grid and values lengths differ");
  }
  if (eta.size() == 0) return;
  if (eta.dim() != k.dim) {
    throw Error(ErrorCode::kGridMismatch, "history dimension does not match kernel");
  }
  if (eta.grid.back() > k.s_max * (1.0 + 1e-9) + 1e-12) {
    throw Error(ErrorCode::kGridMismatch, "history grid exceeds kernel horizon");
  }
}

}  // namespace

HistoryFunction HistoryFunction::Zero(int dim, int nodes, double h) {
  HistoryFunction out;
  out.grid.resize(nodes);
  for (int i = 0; i < nodes; ++i) out.grid[i] = i * h;
  out.values = MatrixXd::Zero(dim, nodes);
  return out;
}

HistoryFunction HistoryFunction::Sample(
    int dim, int nodes, double h, const std::function<VectorXd(double)>& fn) {
  HistoryFunction out = Zero(dim, nodes, h);
  for (int i = 0; i < nodes; ++i) out.values.col(i) = fn(out.grid[i]);
  return out;
}

double default_horizon(double rate) {
  if (!(rate > 0)) throw Error(ErrorCode::kNoDecay, "non-positive decay rate");
  return 12.0 * std::log(10.0) / rate;
}

double spectral_norm(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  if (m.rows() == 1 || m.cols() == 1) return m.norm();
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()(0);
}

KernelSpec exp_scalar_kernel(int dim, double kappa, double scale, double s_max) {
  if (scale == 0.0) return zero_kernel(dim, s_max > 0 ? s_max : default_horizon(kappa));
  return exp_matrix_kernel(scale * MatrixXd::Identity(dim, dim), kappa, s_max);
}

KernelSpec exp_matrix_kernel(const MatrixXd& coeff, double kappa, double s_max) {
  KernelSpec k;
  k.family = "exp";
  k.dim = static_cast<int>(coeff.rows());
  k.value = [coeff, kappa](double s) -> MatrixXd { return coeff * std::exp(-kappa * s); };
  k.derivative = [coeff, kappa](double s) -> MatrixXd {
    return -kappa * coeff * std::exp(-kappa * s);
  };
  k.s_max = s_max > 0 ? s_max : default_horizon(std::abs(kappa) > 0 ? std::abs(kappa) : 1.0);
  if (kappa <= 0 && s_max <= 0) k.s_max = 40.0;
  k.n_quad = static_cast<int>(std::ceil(k.s_max * 200)) + 1;
  k.exp_terms.push_back({kappa, coeff});
  return k;
}

KernelSpec zero_kernel(int dim, double s_max) {
  KernelSpec k;
  k.family = "zero";
  k.dim = dim;
  k.value = [dim](double) -> MatrixXd { return MatrixXd::Zero(dim, dim); };
  k.derivative = k.value;
  k.s_max = s_max;
  k.n_quad = 2;
  k.zero = true;
  return k;
}

KernelSpec table_kernel(const std::vector<double>& s, const std::vector<MatrixXd>& values) {
  if (s.size() < 2 || s.size() != values.size()) {
    throw Error(ErrorCode::kInvalidArgument, "kernel table needs >= 2 matching samples");
  }
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (!(s[i] > s[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "kernel table abscissae must increase");
    }
  }
  if (std::abs(s.front()) > 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "kernel table must start at s = 0");
  }
  KernelSpec k;
  k.family = "table";
  k.dim = static_cast<int>(values.front().rows());
  auto locate = [s](double x) {
    auto it = std::upper_bound(s.begin(), s.end(), x);
    std::size_t i = it == s.begin() ? 0 : static_cast<std::size_t>(it - s.begin()) - 1;
    return std::min(i, s.size() - 2);
  };
  k.value = [s, values, locate](double x) -> MatrixXd {
    if (x >= s.back()) return values.back();
    const std::size_t i = locate(x);
    const double th = (x - s[i]) / (s[i + 1] - s[i]);
    return (1.0 - th) * values[i] + th * values[i + 1];
  };
  k.derivative = [s, values, locate](double x) -> MatrixXd {
    const std::size_t i = locate(std::min(x, s.back()));
    MatrixXd slope = (values[i + 1] - values[i]) / (s[i + 1] - s[i]);
    // At an interior node average the two one-sided slopes.
    if (i > 0 && std::abs(x - s[i]) < 1e-14 * (1.0 + s[i])) {
      slope = 0.5 * (slope + (values[i] - values[i - 1]) / (s[i] - s[i - 1]));
    }
    return slope;
  };
  k.s_max = s.back();
  k.n_quad = static_cast<int>(s.size());
  bool all_zero = true;
  for (const auto& m : values) all_zero = all_zero && m.isZero(0.0);
  k.zero = all_zero;
  return k;
}

KernelConstants certify_kernels(const KernelSpec& A, const KernelSpec& M, int sample_density) {
  if (A.dim != M.dim) {
    throw Error(ErrorCode::kInvalidArgument, "A and M dimensions differ");
  }
  if (!(A.s_max > 0) || !(M.s_max > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "kernel horizon must be positive");
  }
  const int d = A.dim;
  KernelConstants kc;
  const double s_end = std::max(A.s_max, M.s_max);
  const int n = SampleCount(s_end, sample_density, A.n_quad);
  kc.samples = n;

  double c_a = std::numeric_limits<double>::infinity();
  double da2 = 0.0;
  double dm2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = s_end * i / (n - 1);
    const MatrixXd a = A.value(s);
    const double a_norm = a.norm();
    if ((a - a.transpose()).norm() > kSymTol * std::max(a_norm, 1e-300)) {
      throw Error(ErrorCode::kNotPositiveDefinite,
                  "A(s) not symmetric at s=" + std::to_string(s));
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Symmetrize(a));
    const double lmin = es.eigenvalues()(0);
    const double lmax = es.eigenvalues()(d - 1);
    if (!(lmin > kSymTol * a_norm) || !(a_norm > 0)) {
      throw Error(ErrorCode::kNotPositiveDefinite, "A(s) at s=" + std::to_string(s));
    }
    da2 = std::max(da2, lmax / lmin);

    MatrixXd da;
    if (A.derivative) {
      da = A.derivative(s);
    } else {
      const double h = 1e-6 * (1.0 + s);
      da = (A.value(s + h) - A.value(std::max(0.0, s - h))) / (s + h - std::max(0.0, s - h));
    }
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(-Symmetrize(da), Symmetrize(a));
    c_a = std::min(c_a, ges.eigenvalues()(0));

    if (!M.zero) {
      const double ratio = spectral_norm(M.value(s)) / lmin;
      if (!std::isfinite(ratio)) {
        throw Error(ErrorCode::kCouplingTooLarge, "at s=" + std::to_string(s));
      }
      dm2 = std::max(dm2, ratio);
    }
  }
  if (!(c_a > 0)) {
    throw Error(ErrorCode::kNoDecay, "C_A = " + std::to_string(c_a));
  }
  kc.C_A = c_a;
  kc.D_A_bar = std::sqrt(da2);
  kc.D_M_bar = std::sqrt(dm2);

  const int na = SampleCount(A.s_max, sample_density, A.n_quad);
  kc.int_norm_A = Simpson(A.s_max, na, [&](double s) { return spectral_norm(A.value(s)); }, 0.0);
  if (M.zero) {
    kc.int_norm_M = 0.0;
    kc.M_total = MatrixXd::Zero(d, d);
  } else {
    const int nm = SampleCount(M.s_max, sample_density, M.n_quad);
    kc.int_norm_M =
        Simpson(M.s_max, nm, [&](double s) { return spectral_norm(M.value(s)); }, 0.0);
    kc.M_total = Simpson<MatrixXd>(M.s_max, nm, [&](double s) { return M.value(s); },
                                   MatrixXd::Zero(d, d));
  }
  if ((kc.M_total - kc.M_total.transpose()).norm() > 1e-10 * (1.0 + kc.M_total.norm())) {
    throw Error(ErrorCode::kAsymmetricCoupling, "integral of M is not symmetric");
  }
  kc.D_A = kc.D_A_bar * std::sqrt(kc.int_norm_A);
  kc.D_M = kc.D_M_bar * std::sqrt(kc.int_norm_M);
  return kc;
}

double weighted_norm_sq(const HistoryFunction& eta, const KernelSpec& A) {
  CheckGrid(eta, A);
  const int n = eta.size();
  double acc = 0.0;
  double prev = 0.0;
  for (int i = 0; i < n; ++i) {
    const VectorXd v = eta.values.col(i);
    const double g = v.dot(A.value(eta.grid[i]) * v);
    if (i > 0) acc += 0.5 * (eta.grid[i] - eta.grid[i - 1]) * (g + prev);
    prev = g;
  }
  return std::max(acc, 0.0);
}

VectorXd kernel_integral(const KernelSpec& K, const HistoryFunction& eta) {
  CheckGrid(eta, K);
  VectorXd acc = VectorXd::Zero(K.dim);
  if (eta.size() == 0 || K.zero) return acc;
  VectorXd prev = VectorXd::Zero(K.dim);
  for (int i = 0; i < eta.size(); ++i) {
    const VectorXd g = K.value(eta.grid[i]) * eta.values.col(i);
    if (i > 0) acc += 0.5 * (eta.grid[i] - eta.grid[i - 1]) * (g + prev);
    prev = g;
  }
  return acc;
}

}  // namespace morseflow
