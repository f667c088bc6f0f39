#include "morseflow/manifolds.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include "morseflow/errors.h"
#include "newton.h"

namespace morseflow {

namespace {

using detail::SmallNewton;

constexpr double kInf = std::numeric_limits<double>::infinity();

void Axpy(double a, const HistoryFunction& x, HistoryFunction& y) {
  if (x.size() == 0 || a == 0.0) return;
  if (y.size() == 0) {
    y = x;
    y.values *= a;
    return;
  }
  y.values += a * x.values;
}

HistoryFunction Diff(const HistoryFunction& a, const HistoryFunction& b) {
  HistoryFunction out = a;
  if (out.size() == 0) {
    out = b;
    out.values *= -1.0;
    return out;
  }
  if (b.size() > 0) out.values -= b.values;
  return out;
}

double Gram(const std::vector<VectorXd>& fin, const std::vector<HistoryFunction>& eta,
            const TimeTMap& map) {
  // sqrt of the largest eigenvalue of the Gram matrix of the images.
  const int n = static_cast<int>(fin.size());
  if (n == 0) return 0.0;
  MatrixXd G(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double g = fin[i].dot(fin[j]);
      if (!eta.empty()) g += map.eta_dot(eta[i], eta[j]);
      G(i, j) = G(j, i) = g;
    }
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(G, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues()(n - 1)));
}

double LogLogSlope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) continue;
    const double a = std::log(x[i]), b = std::log(y[i]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
    ++n;
  }
  if (n < 2 || n * sxx - sx * sx <= 0) return 0.0;
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TimeTMap::TimeTMap(const IsolatingBlock& block, std::shared_ptr<const MemoryModel> model, double T,
                   bool memory)
    : block_(block), model_(std::move(model)), T_(T), memory_(memory) {
  if (!(T > 0)) throw Error(ErrorCode::kInvalidArgument, "T must be positive");
  const double dt = model_->dt();
  steps_ = std::lround(T / dt);
  if (std::abs(steps_ * dt - T) > 1e-9 * T) {
    throw Error(ErrorCode::kInvalidArgument, "T is not a multiple of dt");
  }
}

LocalPoint TimeTMap::operator()(const LocalPoint& p) const {
  DelayIntegrator in(*model_, HistoryState{block_.to_global(p.y), p.eta, 0.0});
  in.advance(steps_);
  LocalPoint out;
  out.y = block_.to_local(in.value());
  if (memory_) out.eta = in.eta();
  return out;
}

std::vector<VariationalState> TimeTMap::derivative(const LocalPoint& p,
                                                   const std::vector<VariationalState>& dirs,
                                                   LocalPoint* image) const {
  std::vector<VariationalState> amb;
  amb.reserve(dirs.size());
  for (const auto& v : dirs) amb.push_back({block_.frame.T * v.w, v.theta});
  DelayIntegrator in(*model_, HistoryState{block_.to_global(p.y), p.eta, 0.0}, amb);
  in.advance(steps_);
  std::vector<VariationalState> out;
  out.reserve(dirs.size());
  for (int j = 0; j < static_cast<int>(dirs.size()); ++j) {
    VariationalState v;
    v.w = block_.frame.T_inv * in.value(j + 1);
    if (memory_) v.theta = in.eta(j + 1);
    out.push_back(std::move(v));
  }
  if (image) {
    image->y = block_.to_local(in.value());
    if (memory_) image->eta = in.eta();
  }
  return out;
}

double TimeTMap::eta_dot(const HistoryFunction& a, const HistoryFunction& b) const {
  if (a.size() == 0 || b.size() == 0) return 0.0;
  const KernelTables& tab = model_->tables();
  const int n = std::min({a.size(), b.size(), tab.a_nodes});
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    if (tab.a_scalar) {
      acc += tab.wa[k] * tab.a_scale[k] * a.values.col(k).dot(b.values.col(k));
    } else {
      acc += tab.wa[k] * a.values.col(k).dot(tab.A[k] * b.values.col(k));
    }
  }
  return acc;
}

double TimeTMap::eta_norm_sq(const HistoryFunction& eta) const {
  return eta.size() == 0 ? 0.0 : model_->norm_sq(eta);
}

TimeTMap make_time_T_map(const IsolatingBlock& block, std::shared_ptr<const MemoryModel> model,
                         double T, int memory) {
  const bool mem = memory < 0 ? !model->kernels().M.zero : memory > 0;
  return TimeTMap(block, std::move(model), T, mem);
}

TimeTMap make_time_T_map(const IsolatingBlock& block, const Potential& P, const KernelPair& K,
                         double eps, double T, double dt, int memory) {
  return make_time_T_map(block, std::make_shared<MemoryModel>(P, K, eps, dt), T, memory);
}

std::vector<HistoryFunction> memory_probes(const MemoryModel& model) {
  const int d = model.dim();
  const int n = model.nodes();
  const int na = std::min(n, model.tables().a_nodes);
  const double h = model.dt();
  const VectorXd dir = VectorXd::Ones(d) / std::sqrt(static_cast<double>(d));
  std::vector<HistoryFunction> raw;
  HistoryFunction b1 = HistoryFunction::Zero(d, n, h);
  b1.values.col(1) = dir;
  raw.push_back(b1);
  HistoryFunction b2 = HistoryFunction::Zero(d, n, h);
  b2.values.col(na - 2) = dir;
  raw.push_back(b2);
  raw.push_back(HistoryFunction::Sample(d, n, h, [&](double s) {
    return VectorXd(dir * (1.0 - std::exp(-s)) * std::exp(-0.25 * s));
  }));
  // Gram-Schmidt in the weighted inner product.
  std::vector<HistoryFunction> out;
  auto dot = [&](const HistoryFunction& a, const HistoryFunction& b) {
    const KernelTables& tab = model.tables();
    double acc = 0.0;
    for (int k = 0; k < na; ++k) {
      acc += tab.wa[k] * (tab.a_scalar ? tab.a_scale[k] * a.values.col(k).dot(b.values.col(k))
                                       : a.values.col(k).dot(tab.A[k] * b.values.col(k)));
    }
    return acc;
  };
  for (auto& p : raw) {
    for (const auto& q : out) p.values -= dot(p, q) * q.values;
    const double nn = std::sqrt(dot(p, p));
    if (nn > 1e-12) {
      p.values /= nn;
      out.push_back(p);
    }
  }
  return out;
}

std::vector<std::string> TransformConstants::violated() const {
  std::vector<std::string> v;
  if (!(xi > 1)) v.push_back("xi");
  if (!(mu < 1)) v.push_back("mu");
  if (!(beta < 1)) v.push_back("beta");
  if (!(xi1 > 1)) v.push_back("xi1");
  if (!(mu1 < 1)) v.push_back("mu1");
  return v;
}

TransformConstants transform_constants(const TimeTMap& map, double L, int n_samples,
                                       bool no_throw) {
  const IsolatingBlock& b = map.block();
  const int u = b.u(), s = b.s(), d = u + s;
  std::vector<HistoryFunction> probes;
  if (map.memory()) probes = memory_probes(map.model());
  const int p = static_cast<int>(probes.size());

  std::vector<VariationalState> dirs;
  for (int i = 0; i < d; ++i) dirs.push_back({VectorXd::Unit(d, i), HistoryFunction()});
  for (const auto& q : probes) dirs.push_back({VectorXd::Zero(d), q});

  TransformConstants tc;
  tc.L = L;
  tc.eta_probed = p > 0;
  tc.m_xx = kInf;
  for (const auto& x : sample_block(b, 1.0, 1.0, n_samples, 0)) {
    const auto img = map.derivative(LocalPoint{b.to_local(x), HistoryFunction()}, dirs);
    if (u > 0) {
      MatrixXd Axx(u, u), Axy(u, s + p);
      for (int i = 0; i < u; ++i) Axx.col(i) = img[i].w.head(u);
      for (int i = 0; i < s + p; ++i) Axy.col(i) = img[u + i].w.head(u);
      Eigen::JacobiSVD<MatrixXd> svd(Axx);
      tc.m_xx = std::min(tc.m_xx, svd.singularValues()(u - 1));
      if (s + p > 0) tc.n_xy = std::max(tc.n_xy, spectral_norm(Axy));
    }
    std::vector<VectorXd> fx, fy;
    std::vector<HistoryFunction> ex, ey;
    for (int i = 0; i < u; ++i) {
      fx.push_back(img[i].w.tail(s));
      if (map.memory()) ex.push_back(img[i].theta);
    }
    for (int i = 0; i < s + p; ++i) {
      fy.push_back(img[u + i].w.tail(s));
      if (map.memory()) ey.push_back(img[u + i].theta);
    }
    tc.n_yx = std::max(tc.n_yx, Gram(fx, ex, map));
    tc.n_yy = std::max(tc.n_yy, Gram(fy, ey, map));
    ++tc.samples;
  }
  tc.xi = u > 0 ? tc.m_xx - L * tc.n_xy : kInf;
  tc.mu = tc.n_yx / L + tc.n_yy;
  tc.beta = (u > 0 ? tc.mu / tc.xi * L * tc.n_xy : 0.0) + tc.n_yy;
  tc.xi1 = u > 0 ? tc.m_xx - tc.n_yx / L : kInf;
  tc.mu1 = tc.n_yy + L * tc.n_xy;
  const auto bad = tc.violated();
  if (!bad.empty() && !no_throw) {
    std::string names;
    for (const auto& n : bad) names += (names.empty() ? "" : ",") + n;
    throw Error(ErrorCode::kBoundsViolated, names);
  }
  return tc;
}

PreparedTransform prepare_transform(const IsolatingBlock& block,
                                    std::shared_ptr<const MemoryModel> model, double T0, double L0,
                                    int n_samples) {
  PreparedTransform out;
  for (double T = T0; T <= 8.0 * T0 * (1 + 1e-12); T *= 2.0) {
    auto map = std::make_shared<TimeTMap>(make_time_T_map(block, model, T));
    for (double L = L0; L <= 64.0 * (1 + 1e-12); L *= 2.0) {
      TransformConstants tc = transform_constants(*map, L, n_samples, true);
      out.map = map;
      out.constants = tc;
      if (tc.violated().empty()) return out;
      // Larger L only helps mu and xi1.
      if (tc.mu < 1 && tc.xi1 > 1) break;
    }
  }
  std::string names;
  for (const auto& n : out.constants.violated()) names += (names.empty() ? "" : ",") + n;
  throw Error(ErrorCode::kBoundsViolated, names + " (after raising L and T)");
}

int BoxGrid::size() const {
  int s = 1;
  for (int k = 0; k < dim; ++k) s *= n;
  return s;
}

VectorXd BoxGrid::node(int i) const {
  VectorXd p(dim);
  for (int k = 0; k < dim; ++k) {
    const int j = i % n;
    i /= n;
    p(k) = n > 1 ? -r + j * h() : 0.0;
  }
  return p;
}

int BoxGrid::neighbour(int i, int k, int dir) const {
  int stride = 1;
  for (int a = 0; a < k; ++a) stride *= n;
  const int j = (i / stride) % n + dir;
  if (j < 0 || j >= n) return -1;
  return i + dir * stride;
}

std::vector<std::pair<int, double>> BoxGrid::weights(const VectorXd& p) const {
  std::vector<std::pair<int, double>> w{{0, 1.0}};
  int stride = 1;
  for (int k = 0; k < dim; ++k) {
    std::vector<std::pair<int, double>> axis;
    if (n == 1) {
      axis.push_back({0, 1.0});
    } else {
      const double t = (p(k) + r) / h();
      const int m = std::min(n, 4);
      int j0 = static_cast<int>(std::floor(t)) - (m == 4 ? 1 : 0);
      j0 = std::clamp(j0, 0, n - m);
      for (int a = 0; a < m; ++a) {
        double l = 1.0;
        for (int b = 0; b < m; ++b) {
          if (b != a) l *= (t - (j0 + b)) / static_cast<double>(a - b);
        }
        axis.push_back({j0 + a, l});
      }
    }
    std::vector<std::pair<int, double>> next;
    for (const auto& [idx, wt] : w) {
      for (const auto& [j, l] : axis) next.push_back({idx + j * stride, wt * l});
    }
    w = std::move(next);
    stride *= n;
  }
  return w;
}

VectorXd DiskFunction::value_at(const VectorXd& base) const {
  VectorXd v = VectorXd::Zero(fiber_dim);
  const int P = n_probes();
  for (const auto& [i, w] : grid.weights(base)) v += w * values[i * P];
  return v;
}

HistoryFunction DiskFunction::eta_at(const VectorXd& base) const {
  HistoryFunction out;
  if (eta.empty()) return out;
  for (const auto& [i, w] : grid.weights(base)) Axpy(w, eta[i], out);
  return out;
}

VectorXd DiskFunction::vertical_at(const VectorXd& ys, const HistoryFunction& e,
                                   const TimeTMap& map) const {
  const int P = n_probes();
  const auto wts = grid.weights(ys);
  VectorXd v0 = VectorXd::Zero(fiber_dim);
  for (const auto& [i, w] : wts) v0 += w * values[i * P];
  VectorXd v = v0;
  for (int j = 1; j < P; ++j) {
    const double c = map.eta_dot(e, probes[j]) / (probe_radius * probe_radius);
    if (c == 0.0) continue;
    VectorXd vj = VectorXd::Zero(fiber_dim);
    for (const auto& [i, w] : wts) vj += w * values[i * P + j];
    v += c * (vj - v0);
  }
  return v;
}

namespace {

using detail::SmallNewton;

struct Tracker {
  double tol;
  std::vector<double>& changes;
  double& max_ratio;
  int bad = 0;

  // Returns true once the iteration has converged.
  bool push(double change, const char* what) {
    changes.push_back(change);
    const std::size_t k = changes.size();
    if (k >= 2 && changes[k - 2] > 1e3 * tol) {
      const double ratio = change / changes[k - 2];
      max_ratio = std::max(max_ratio, ratio);
      bad = ratio >= 1.0 ? bad + 1 : 0;
      if (bad >= 3) throw Error(ErrorCode::kNotContracting, what);
    }
    return change <= tol;
  }
};

double Lipschitz(const BoxGrid& g, const std::function<double(int, int)>& dist) {
  double lip = 0.0;
  const double h = g.h();
  if (h == 0.0) return 0.0;
  for (int i = 0; i < g.size(); ++i) {
    for (int k = 0; k < g.dim; ++k) {
      const int j = g.neighbour(i, k, 1);
      if (j >= 0) lip = std::max(lip, dist(i, j) / h);
    }
  }
  return lip;
}

}  // namespace

DiskFunction unstable_manifold(const TimeTMap& map, const ManifoldOptions& opt) {
  const IsolatingBlock& b = map.block();
  const int u = b.u(), s = b.s();
  DiskFunction disk;
  disk.orientation = Orientation::kHorizontal;
  disk.grid = BoxGrid{u, u > 0 ? opt.grid : 1, b.delta};
  disk.fiber_dim = s;
  disk.L_bound = opt.L;
  disk.eps = map.eps();
  const int N = disk.grid.size();
  const int d = u + s;
  disk.values.assign(N, opt.seed_offset.size() == s ? opt.seed_offset : VectorXd::Zero(s));
  if (map.memory()) {
    if (static_cast<int>(opt.seed_eta.size()) == N) {
      disk.eta = opt.seed_eta;
    } else {
      disk.eta.assign(N, map.model().zero_history());
    }
  }
  const MatrixXd Ju = b.frame.jordan.topLeftCorner(u, u);
  const MatrixXd back = u > 0 ? MatrixXd((-map.T() * Ju).exp()) : MatrixXd(0, 0);
  disk.preimages.resize(N);
  for (int n = 0; n < N; ++n) disk.preimages[n] = back * disk.grid.node(n);
  std::vector<SmallNewton> newton(N);

  auto lift = [&](const DiskFunction& cur, const VectorXd& xb) {
    LocalPoint p;
    p.y.resize(d);
    p.y.head(u) = xb;
    p.y.tail(s) = cur.value_at(xb);
    p.eta = cur.eta_at(xb);
    return p;
  };
  // One sweep of the transform; returns the image disk.
  auto sweep = [&](const DiskFunction& cur, DiskFunction& next, bool update_pre) {
    for (int n = 0; n < N; ++n) {
      const VectorXd xn = cur.grid.node(n);
      LocalPoint img;
      auto F = [&](const VectorXd& xb) {
        img = map(lift(cur, xb));
        return VectorXd(img.y.head(u) - xn);
      };
      VectorXd xb = cur.preimages[n], r;
      const double tol = 1e-14 * (1.0 + b.delta);
      bool ok = newton[n].solve(F, xb, r, tol, 50, 1e-7 * std::max(1.0, b.delta));
      if (!ok) {
        // Continuation from the nearest node solved in this sweep.
        for (int k = 0; k < u && !ok; ++k) {
          for (int dir : {-1, 1}) {
            const int m = cur.grid.neighbour(n, k, dir);
            if (m < 0 || m > n) continue;
            xb = next.preimages[m];
            newton[n].have_J = false;
            if ((ok = newton[n].solve(F, xb, r, tol, 50, 1e-7))) break;
          }
        }
      }
      if (!ok) throw Error(ErrorCode::kNewtonStall, "unstable disk node " + std::to_string(n));
      F(xb);  // leave img at the solution
      next.values[n] = img.y.tail(s);
      if (map.memory()) next.eta[n] = std::move(img.eta);
      if (update_pre) next.preimages[n] = xb;
    }
  };
  auto change = [&](const DiskFunction& a, const DiskFunction& c) {
    double m = 0.0;
    for (int n = 0; n < N; ++n) {
      double q = (a.values[n] - c.values[n]).squaredNorm();
      if (map.memory()) q += map.eta_norm_sq(Diff(a.eta[n], c.eta[n]));
      m = std::max(m, std::sqrt(q));
    }
    return m;
  };

  Tracker tr{opt.tol, disk.changes, disk.max_ratio};
  for (int it = 0; it < opt.max_iters; ++it) {
    DiskFunction next = disk;
    sweep(disk, next, true);
    const double c = change(disk, next);
    disk.values = std::move(next.values);
    disk.eta = std::move(next.eta);
    disk.preimages = std::move(next.preimages);
    disk.iterations = it + 1;
    disk.final_change = c;
    if (tr.push(c, "unstable graph transform")) break;
  }
  {
    DiskFunction again = disk;
    sweep(disk, again, false);
    disk.invariance_defect = change(disk, again);
  }
  disk.lip_estimate = Lipschitz(disk.grid, [&](int i, int j) {
    double q = (disk.values[i] - disk.values[j]).squaredNorm();
    if (map.memory()) q += map.eta_norm_sq(Diff(disk.eta[i], disk.eta[j]));
    return std::sqrt(q);
  });
  return disk;
}

DiskFunction stable_manifold(const TimeTMap& map, const ManifoldOptions& opt) {
  const IsolatingBlock& b = map.block();
  const int u = b.u(), s = b.s(), d = u + s;
  DiskFunction disk;
  disk.orientation = Orientation::kVertical;
  disk.grid = BoxGrid{s, s > 0 ? opt.grid : 1, b.delta};
  disk.fiber_dim = u;
  disk.L_bound = opt.L;
  disk.eps = map.eps();
  disk.probes.push_back(HistoryFunction());
  if (map.memory()) {
    disk.probe_radius = 0.5 * b.R;
    for (auto q : memory_probes(map.model())) {
      q.values *= disk.probe_radius;
      disk.probes.push_back(std::move(q));
    }
  }
  const int N = disk.grid.size(), P = disk.n_probes();
  disk.values.assign(N * P, VectorXd::Zero(u));
  if (u == 0) return disk;  // the whole block is the stable set
  std::vector<SmallNewton> newton(N * P);

  auto sweep = [&](const DiskFunction& cur, std::vector<VectorXd>& next) {
    for (int n = 0; n < N; ++n) {
      for (int j = 0; j < P; ++j) {
        const int idx = n * P + j;
        LocalPoint p;
        p.y.resize(d);
        p.y.tail(s) = cur.grid.node(n);
        p.eta = cur.probes[j];
        auto G = [&](const VectorXd& x) {
          p.y.head(u) = x;
          const LocalPoint img = map(p);
          return VectorXd(img.y.head(u) - cur.vertical_at(img.y.tail(s), img.eta, map));
        };
        VectorXd x = cur.values[idx], r;
        bool ok = newton[idx].solve(G, x, r, 1e-14 * (1.0 + b.delta), 50, 1e-7);
        if (!ok && j > 0) {
          x = next[n * P];
          newton[idx].have_J = false;
          ok = newton[idx].solve(G, x, r, 1e-14 * (1.0 + b.delta), 50, 1e-7);
        }
        if (!ok) throw Error(ErrorCode::kNewtonStall, "stable disk node " + std::to_string(idx));
        next[idx] = x;
      }
    }
  };
  auto change = [&](const std::vector<VectorXd>& a, const std::vector<VectorXd>& c) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - c[i]).norm());
    return m;
  };
  Tracker tr{opt.tol, disk.changes, disk.max_ratio};
  for (int it = 0; it < opt.max_iters; ++it) {
    std::vector<VectorXd> next = disk.values;
    sweep(disk, next);
    const double c = change(disk.values, next);
    disk.values = std::move(next);
    disk.iterations = it + 1;
    disk.final_change = c;
    if (tr.push(c, "stable graph transform")) break;
  }
  // Defect: |y_u(image) - v(image)| at the graph points.
  for (int idx = 0; idx < N * P; ++idx) {
    LocalPoint p;
    p.y.resize(d);
    p.y.head(u) = disk.values[idx];
    p.y.tail(s) = disk.grid.node(idx / P);
    p.eta = disk.probes[idx % P];
    const LocalPoint img = map(p);
    disk.invariance_defect = std::max(
        disk.invariance_defect, (img.y.head(u) - disk.vertical_at(img.y.tail(s), img.eta, map)).norm());
  }
  disk.lip_estimate = Lipschitz(disk.grid, [&](int i, int j) {
    return (disk.values[i * P] - disk.values[j * P]).norm();
  });
  for (int n = 0; n < N; ++n) {
    for (int j = 1; j < P; ++j) {
      disk.lip_estimate = std::max(
          disk.lip_estimate, (disk.values[n * P + j] - disk.values[n * P]).norm() / disk.probe_radius);
    }
  }
  return disk;
}

SlopeField derivative_field(const TimeTMap& map, const DiskFunction& disk, double tol,
                            int max_iters) {
  if (disk.orientation != Orientation::kHorizontal) {
    throw Error(ErrorCode::kInvalidArgument, "derivative_field needs a horizontal disk");
  }
  const IsolatingBlock& b = map.block();
  const int u = b.u(), s = b.s(), d = u + s;
  SlopeField f;
  f.grid = disk.grid;
  const int N = disk.grid.size();
  f.slopes.assign(N, MatrixXd::Zero(s, u));
  f.eta_slopes.assign(N, std::vector<HistoryFunction>(map.memory() ? u : 0, map.model().zero_history()));
  if (u == 0) return f;

  std::vector<LocalPoint> base(N);
  for (int n = 0; n < N; ++n) {
    const VectorXd& xb = disk.preimages[n];
    base[n].y.resize(d);
    base[n].y.head(u) = xb;
    base[n].y.tail(s) = disk.value_at(xb);
    base[n].eta = disk.eta_at(xb);
  }
  std::vector<double> changes;
  Tracker tr{tol, changes, f.max_ratio};
  for (int it = 0; it < max_iters; ++it) {
    SlopeField next = f;
    double ch = 0.0;
    for (int n = 0; n < N; ++n) {
      const auto wts = disk.grid.weights(disk.preimages[n]);
      MatrixXd S = MatrixXd::Zero(s, u);
      std::vector<HistoryFunction> Th(map.memory() ? u : 0);
      for (const auto& [m, w] : wts) {
        S += w * f.slopes[m];
        for (int i = 0; i < static_cast<int>(Th.size()); ++i) Axpy(w, f.eta_slopes[m][i], Th[i]);
      }
      std::vector<VariationalState> dirs;
      for (int i = 0; i < u; ++i) {
        VectorXd w(d);
        w.head(u) = VectorXd::Unit(u, i);
        w.tail(s) = S.col(i);
        dirs.push_back({w, map.memory() ? Th[i] : HistoryFunction()});
      }
      const auto img = map.derivative(base[n], dirs);
      MatrixXd A(u, u), B(s, u);
      for (int i = 0; i < u; ++i) {
        A.col(i) = img[i].w.head(u);
        B.col(i) = img[i].w.tail(s);
      }
      const MatrixXd Ai = A.inverse();
      next.slopes[n] = B * Ai;
      if (map.memory()) {
        for (int j = 0; j < u; ++j) {
          HistoryFunction t;
          for (int i = 0; i < u; ++i) Axpy(Ai(i, j), img[i].theta, t);
          next.eta_slopes[n][j] = std::move(t);
        }
      }
      for (int j = 0; j < u; ++j) {
        double q = (next.slopes[n].col(j) - f.slopes[n].col(j)).squaredNorm();
        if (map.memory()) q += map.eta_norm_sq(Diff(next.eta_slopes[n][j], f.eta_slopes[n][j]));
        ch = std::max(ch, std::sqrt(q));
      }
    }
    f.slopes = std::move(next.slopes);
    f.eta_slopes = std::move(next.eta_slopes);
    f.iterations = it + 1;
    try {
      if (tr.push(ch, "fiber transform")) break;
    } catch (const Error& e) {
      throw Error(ErrorCode::kFiberNotContracting, e.what());
    }
  }
  f.lip_M = Lipschitz(f.grid, [&](int i, int j) {
    double q = (f.slopes[i] - f.slopes[j]).squaredNorm();
    for (int k = 0; k < static_cast<int>(f.eta_slopes[i].size()); ++k) {
      q += map.eta_norm_sq(Diff(f.eta_slopes[i][k], f.eta_slopes[j][k]));
    }
    return std::sqrt(q);
  });
  return f;
}

double slope_fd_mismatch(const TimeTMap& map, const DiskFunction& disk, const SlopeField& field) {
  double worst = 0.0;
  const BoxGrid& g = disk.grid;
  const double h = g.h();
  for (int n = 0; n < g.size(); ++n) {
    for (int k = 0; k < g.dim; ++k) {
      const int a = g.neighbour(n, k, -1), c = g.neighbour(n, k, 1);
      if (a < 0 || c < 0) continue;
      const VectorXd fd = (disk.values[c] - disk.values[a]) / (2.0 * h);
      double q = (field.slopes[n].col(k) - fd).squaredNorm();
      if (map.memory() && !disk.eta.empty()) {
        HistoryFunction e = Diff(disk.eta[c], disk.eta[a]);
        e.values /= 2.0 * h;
        q += map.eta_norm_sq(Diff(field.eta_slopes[n][k], e));
      }
      worst = std::max(worst, std::sqrt(q));
    }
  }
  return worst;
}

double disk_distance(const TimeTMap& map, const DiskFunction& a, const DiskFunction& b) {
  if (a.values.size() != b.values.size()) {
    throw Error(ErrorCode::kGridMismatch, "disks live on different grids");
  }
  double m = 0.0;
  for (std::size_t n = 0; n < a.values.size(); ++n) {
    double q = (a.values[n] - b.values[n]).squaredNorm();
    if (!a.eta.empty() && !b.eta.empty()) q += map.eta_norm_sq(Diff(a.eta[n], b.eta[n]));
    m = std::max(m, std::sqrt(q));
  }
  return m;
}

double slope_distance(const TimeTMap& map, const SlopeField& a, const SlopeField& b) {
  if (a.slopes.size() != b.slopes.size()) {
    throw Error(ErrorCode::kGridMismatch, "slope fields live on different grids");
  }
  double m = 0.0;
  for (std::size_t n = 0; n < a.slopes.size(); ++n) {
    double q = (a.slopes[n] - b.slopes[n]).squaredNorm();
    for (std::size_t k = 0; k < std::min(a.eta_slopes[n].size(), b.eta_slopes[n].size()); ++k) {
      q += map.eta_norm_sq(Diff(a.eta_slopes[n][k], b.eta_slopes[n][k]));
    }
    m = std::max(m, std::sqrt(q));
  }
  return m;
}

EpsContinuityReport eps_continuity_report(const IsolatingBlock& block,
                                          std::shared_ptr<const MemoryModel> model,
                                          const std::vector<double>& eps_list, double L, double T,
                                          const ManifoldOptions& opt) {
  ManifoldOptions o = opt;
  o.L = L;
  const TimeTMap m0 = make_time_T_map(block, model->with_eps(0.0), T);
  const DiskFunction d0 = unstable_manifold(m0, o);
  const SlopeField s0 = derivative_field(m0, d0);
  EpsContinuityReport rep;
  std::vector<double> xs, dv, ds;
  for (double eps : eps_list) {
    EpsContinuityRow row;
    row.eps = eps;
    if (eps != 0.0) {
      const TimeTMap me = make_time_T_map(block, model->with_eps(eps), T, m0.memory() ? 1 : 0);
      ManifoldOptions oe = o;
      oe.seed_eta = d0.eta;
      const DiskFunction de = unstable_manifold(me, oe);
      const SlopeField se = derivative_field(me, de);
      row.value_distance = disk_distance(m0, de, d0);
      row.slope_distance = slope_distance(m0, se, s0);
    }
    rep.rows.push_back(row);
    xs.push_back(eps);
    dv.push_back(row.value_distance);
    ds.push_back(row.slope_distance);
  }
  rep.value_slope = LogLogSlope(xs, dv);
  rep.slope_slope = LogLogSlope(xs, ds);
  return rep;
}

}  // namespace morseflow
