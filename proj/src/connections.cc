#include "morseflow/connections.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/QR>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include "morseflow/errors.h"
#include "newton.h"

namespace morseflow {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

MatrixXd OrthoBasis(const MatrixXd& A) {
  if (A.cols() == 0) return MatrixXd(A.rows(), 0);
  Eigen::HouseholderQR<MatrixXd> qr(A);
  return qr.householderQ() * MatrixXd::Identity(A.rows(), A.cols());
}

double MinSingular(const MatrixXd& A) {
  if (A.cols() == 0) return 1.0;
  Eigen::JacobiSVD<MatrixXd> svd(A);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

}  // namespace

double EmbeddedDisk::max_eta_norm(const MemoryModel& model) const {
  double m = 0.0;
  for (const auto& s : samples) {
    if (s.eta.size() > 0) m = std::max(m, std::sqrt(model.norm_sq(s.eta)));
  }
  return m;
}

TangentGraph reparametrize_over_tangent(const EmbeddedDisk& disk, const MatrixXd& frame,
                                        const VectorXd& z0, double L_target, double r0,
                                        double r_min, int nodes_per_axis) {
  const int m = disk.base_dim();
  const int d = static_cast<int>(frame.rows());
  const int f = d - m;
  const MatrixXd Fi = frame.inverse();
  std::vector<VectorXd> qb, qf;
  for (const auto& s : disk.samples) {
    const VectorXd q = Fi * (s.x - z0);
    qb.push_back(q.head(m));
    qf.push_back(q.tail(f));
  }
  if (r0 <= 0) {
    for (const auto& b : qb) r0 = std::max(r0, b.cwiseAbs().maxCoeff());
  }
  const int ncoef = 1 + m + m * (m + 1) / 2;
  auto basis = [&](const VectorXd& v) {
    VectorXd phi(ncoef);
    int k = 0;
    phi(k++) = 1.0;
    for (int i = 0; i < m; ++i) phi(k++) = v(i);
    for (int i = 0; i < m; ++i) {
      for (int j = i; j < m; ++j) phi(k++) = v(i) * v(j);
    }
    return phi;
  };
  TangentGraph g;
  g.frame = frame;
  g.z0 = z0;
  for (double r = r0; r >= r_min; r *= 0.5) {
    std::vector<int> inside;
    for (int i = 0; i < static_cast<int>(qb.size()); ++i) {
      if (qb[i].cwiseAbs().maxCoeff() <= 1.5 * r) inside.push_back(i);
    }
    if (static_cast<int>(inside.size()) < ncoef) {
      throw Error(ErrorCode::kInsufficientSamples,
                  std::to_string(inside.size()) + " samples within radius " + std::to_string(r));
    }
    g.grid = BoxGrid{m, nodes_per_axis, r};
    g.values.assign(g.grid.size(), VectorXd::Zero(f));
    const int K = std::min<int>(inside.size(), std::max(3 * ncoef, 10));
    for (int n = 0; n < g.grid.size(); ++n) {
      const VectorXd c = g.grid.node(n);
      std::vector<std::pair<double, int>> near;
      for (int i : inside) near.push_back({(qb[i] - c).norm(), i});
      std::partial_sort(near.begin(), near.begin() + K, near.end());
      const double bw = std::max(near[K - 1].first, 1e-300);
      MatrixXd A(K, ncoef);
      MatrixXd B(K, f);
      for (int k = 0; k < K; ++k) {
        const int i = near[k].second;
        const double w = std::exp(-0.5 * std::pow(near[k].first / bw, 2));
        const double sw = std::sqrt(w);
        A.row(k) = sw * basis(VectorXd(qb[i] - c)).transpose();
        B.row(k) = sw * qf[i].transpose();
      }
      const MatrixXd coef = A.colPivHouseholderQr().solve(B);
      g.values[n] = coef.row(0).transpose();
    }
    g.lip_estimate = 0.0;
    g.delta2 = 0.0;
    for (int n = 0; n < g.grid.size(); ++n) {
      g.delta2 = std::max(g.delta2, g.values[n].size() ? g.values[n].cwiseAbs().maxCoeff() : 0.0);
      for (int k = 0; k < m; ++k) {
        const int j = g.grid.neighbour(n, k, 1);
        if (j >= 0) g.lip_estimate = std::max(g.lip_estimate, (g.values[j] - g.values[n]).norm() / g.grid.h());
      }
    }
    g.delta1 = r;
    if (g.lip_estimate <= L_target) return g;
  }
  throw Error(ErrorCode::kLipschitzUnreachable,
              "slope " + std::to_string(g.lip_estimate) + " > " + std::to_string(L_target));
}

EmbeddedDisk transport_disk(const EmbeddedDisk& disk, const MemoryModel& model, double t) {
  const long steps = std::lround(t / model.dt());
  EmbeddedDisk out;
  out.samples.reserve(disk.samples.size());
  for (const auto& s : disk.samples) {
    std::vector<VariationalState> tangents;
    for (int k = 0; k < s.tangent.cols(); ++k) tangents.push_back({s.tangent.col(k), HistoryFunction()});
    DelayIntegrator in(model, HistoryState{s.x, s.eta, 0.0}, tangents);
    for (long n = 0; n < steps; ++n) {
      in.step();
      if (!(in.value().norm() < 1e6)) throw Error(ErrorCode::kBlowup, "transported sample diverged");
    }
    DiskSample o;
    o.base = s.base;
    o.x = in.value();
    if (steps > 0 || s.eta.size() > 0) o.eta = in.eta();
    MatrixXd W(s.x.size(), s.tangent.cols());
    for (int k = 0; k < s.tangent.cols(); ++k) W.col(k) = in.value(k + 1);
    o.tangent = steps > 0 ? OrthoBasis(W) : s.tangent;
    out.samples.push_back(std::move(o));
  }
  out.lip_estimate = disk.lip_estimate;
  return out;
}

IntersectionFrame build_intersection_frame(const MatrixXd& Tu, const MatrixXd& Ts,
                                           const VectorXd& z) {
  const int d = static_cast<int>(z.size());
  const MatrixXd Qu = OrthoBasis(Tu), Qs = OrthoBasis(Ts);
  const int u = static_cast<int>(Qu.cols()), s = static_cast<int>(Qs.cols());
  if (MinSingular(Qu) < 1e-8 || MinSingular(Qs) < 1e-8) {
    throw Error(ErrorCode::kNotTransversal, "tangent frame is rank deficient");
  }
  MatrixXd both(d, u + s);
  both << Qu, Qs;
  {
    Eigen::JacobiSVD<MatrixXd> svd(both);
    int rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i) rank += svd.singularValues()(i) > 1e-8;
    if (rank < d) throw Error(ErrorCode::kNotTransversal, "tangent spaces do not span the space");
  }
  IntersectionFrame fr;
  fr.z = z;
  fr.c = u + s - d;
  if (fr.c < 1) throw Error(ErrorCode::kNotTransversal, "u + s <= d leaves no common direction");
  fr.k1 = u - fr.c;
  fr.k2 = s - fr.c;
  // Principal vectors: the c most aligned pairs span the intersection.
  Eigen::JacobiSVD<MatrixXd> svd(Qu.transpose() * Qs, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const MatrixXd Pu = Qu * svd.matrixU();
  const MatrixXd Ps = Qs * svd.matrixV();
  MatrixXd common = Pu.leftCols(fr.c);
  MatrixXd only_u = Pu.rightCols(fr.k1);
  // Stable directions orthogonal to the common span.
  MatrixXd only_s = Ps.rightCols(fr.k2);
  fr.M.resize(d, d);
  fr.M << only_u, common, only_s;
  if (fr.k1 > 0 && fr.k2 > 0) {
    Eigen::JacobiSVD<MatrixXd> a(only_u.transpose() * only_s);
    fr.margin = std::acos(std::min(1.0, a.singularValues()(0)));
  } else {
    fr.margin = std::numbers::pi / 2;
  }
  Eigen::JacobiSVD<MatrixXd> sm(fr.M);
  fr.cond = sm.singularValues()(0) / sm.singularValues()(d - 1);
  if (!(fr.cond < 1e10)) throw Error(ErrorCode::kNotTransversal, "intersection frame is singular");
  return fr;
}

IntersectionFrame build_intersection_frame(const EmbeddedDisk& wu, const EmbeddedDisk& ws,
                                           const VectorXd& z) {
  auto nearest = [&](const EmbeddedDisk& e) -> const DiskSample& {
    if (e.samples.empty()) throw Error(ErrorCode::kInsufficientSamples, "empty disk");
    std::size_t best = 0;
    for (std::size_t i = 1; i < e.samples.size(); ++i) {
      if ((e.samples[i].x - z).norm() < (e.samples[best].x - z).norm()) best = i;
    }
    return e.samples[best];
  };
  return build_intersection_frame(nearest(wu).tangent, nearest(ws).tangent, z);
}

bool ConnectionGraph::has_edge(int i, int j) const { return find_edge(i, j) >= 0; }

int ConnectionGraph::find_edge(int i, int j) const {
  for (std::size_t k = 0; k < edges.size(); ++k) {
    if (edges[k].from == i && edges[k].to == j) return static_cast<int>(k);
  }
  return -1;
}

ConnectionFinder::ConnectionFinder(const Potential& P, const KernelPair& K, double eps,
                                   const GraphOptions& opt)
    : P_(P), K_(K), eps_(eps), opt_(opt) {
  kc_ = certify_kernels(K.A, K.M);
  model_ = std::make_shared<MemoryModel>(P, K, eps, opt.shooting.dt);
  SearchBox box = opt.box;
  if (box.lo.size() == 0) box = SearchBox::Cube(P.dim, std::max(2.0, P.diss_R));
  eqs_ = find_equilibria(P, kc_, eps, box, opt.equilibria);
  BlockOptions bo = opt.block;
  if (eps > 0 && std::find(bo.verify_eps.begin(), bo.verify_eps.end(), eps) == bo.verify_eps.end()) {
    bo.verify_eps.push_back(eps);
  }
  for (const auto& e : eqs_) blocks_.push_back(build_block(e, eqs_, P, kc_, bo));
}

double ConnectionFinder::lyapunov(int i) const {
  const VectorXd& x = eqs_[i].point;
  return -2.0 * P_.F(x) - eps_ * x.dot(kc_.M_total * x);
}

int ConnectionFinder::locate(const VectorXd& x) const {
  for (int j = 0; j < static_cast<int>(blocks_.size()); ++j) {
    if (blocks_[j].contains(x)) return j;
  }
  return -1;
}

std::shared_ptr<TimeTMap> ConnectionFinder::block_map(int i) {
  auto it = maps_.find(i);
  if (it != maps_.end()) return it->second;
  auto pt = prepare_transform(blocks_[i], model_, opt_.manifold_T);
  maps_[i] = pt.map;
  return pt.map;
}

const DiskFunction* ConnectionFinder::unstable_disk(int i) {
  auto it = udisks_.find(i);
  if (it != udisks_.end()) return &it->second;
  auto pt = prepare_transform(blocks_[i], model_, opt_.manifold_T);
  maps_[i] = pt.map;
  ManifoldOptions mo;
  mo.L = pt.constants.L;
  return &(udisks_[i] = unstable_manifold(*pt.map, mo));
}

const DiskFunction* ConnectionFinder::stable_disk(int j) {
  auto it = sdisks_.find(j);
  if (it != sdisks_.end()) return &it->second;
  auto pt = prepare_transform(blocks_[j], model_, opt_.manifold_T);
  maps_[j] = pt.map;
  ManifoldOptions mo;
  mo.L = pt.constants.L;
  return &(sdisks_[j] = stable_manifold(*pt.map, mo));
}

VectorXd ConnectionFinder::fan_base(int i, double param) const {
  const IsolatingBlock& b = blocks_[i];
  const int u = b.u();
  const double r = opt_.shooting.seed_fraction * b.delta;
  VectorXd y(u);
  if (u == 1) {
    y(0) = param < 0.5 ? -r : r;
  } else if (u == 2) {
    y << r * std::cos(param), r * std::sin(param);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "fans are implemented for u <= 2");
  }
  return y;
}

LocalPoint ConnectionFinder::seed_point(int i, const VectorXd& base) {
  const IsolatingBlock& b = blocks_[i];
  const int u = b.u(), s = b.s(), d = u + s;
  LocalPoint p;
  p.y = VectorXd::Zero(d);
  p.y.head(u) = base;
  if (u < d) {
    const DiskFunction* disk = unstable_disk(i);
    p.y.tail(s) = disk->value_at(base);
    p.eta = disk->eta_at(base);
  } else if (eps_ > 0) {
    // Open unstable set: only the memory fiber is needed. Use the history of
    // the linearized backward orbit.
    const MatrixXd J = b.frame.jordan;
    const MatrixXd step = (-model_->dt() * J).exp();
    p.eta = model_->zero_history();
    VectorXd y = base;
    for (int k = 0; k < p.eta.size(); ++k) {
      p.eta.values.col(k) = b.frame.T * (y - base);
      y = step * y;
    }
  }
  return p;
}

ConnectionFinder::Shot ConnectionFinder::shoot(int i, double param) {
  Shot shot;
  shot.param = param;
  shot.base = fan_base(i, param);
  const LocalPoint p = seed_point(i, shot.base);
  const IsolatingBlock& src = blocks_[i];
  DelayIntegrator in(*model_, HistoryState{src.to_global(p.y), p.eta, 0.0});
  const long steps = std::lround(opt_.shooting.horizon / model_->dt());
  const int nb = static_cast<int>(blocks_.size());
  std::vector<char> inside(nb, 0);
  for (long n = 1; n <= steps; ++n) {
    in.step();
    const VectorXd x = in.value();
    if (!(x.norm() < 1e3)) break;
    const double t = in.time();
    for (int j = 0; j < nb; ++j) {
      if (j == i) continue;
      const IsolatingBlock& b = blocks_[j];
      const VectorXd y = b.to_local(x);
      const bool now = b.contains_local(y);
      if (now) {
        Visit& v = shot.visits[j];
        if (v.step_enter < 0) {
          v.step_enter = n;
          v.t_enter = t;
          v.x_enter = x;
        }
        if (v.t_inner < 0 && (b.s() == 0 || b.stable_size(y) <= 0.75)) {
          v.t_inner = t;
          v.x_inner = x;
        }
        v.stay += model_->dt();
        if (b.u() == 0) {
          bool ball = true;
          if (eps_ > 0) ball = std::sqrt(in.eta_norm_sq()) <= b.R;
          if (ball && v.t_inner >= 0) {
            shot.terminal = j;
            return shot;
          }
        }
      } else if (inside[j] && b.u() > 0) {
        shot.visits[j].exit_sign = y(0) > 0 ? 1 : -1;
      }
      inside[j] = now;
    }
  }
  return shot;
}

ConnectionFinder::Fan& ConnectionFinder::fan(int i) {
  Fan& f = fans_[i];
  if (f.done) return f;
  f.done = true;
  const int u = blocks_[i].u();
  if (u == 0) return f;
  if (u == 1) {
    f.shots.push_back(shoot(i, 0.0));
    f.shots.push_back(shoot(i, 1.0));
    return f;
  }
  const int n = std::max(4, opt_.shooting.fan);
  std::vector<Shot> coarse;
  for (int k = 0; k < n; ++k) coarse.push_back(shoot(i, kTwoPi * k / n));
  // Refine between neighbours that end in different sinks.
  std::vector<Shot> fine;
  const int rf = std::max(1, opt_.shooting.refine);
  for (int k = 0; k < n; ++k) {
    const Shot& a = coarse[k];
    const Shot& b = coarse[(k + 1) % n];
    fine.push_back(a);
    if (a.terminal != b.terminal) {
      for (int q = 1; q < rf; ++q) fine.push_back(shoot(i, kTwoPi * (k + static_cast<double>(q) / rf) / n));
    }
  }
  const int m = static_cast<int>(fine.size());
  for (int k = 0; k < m; ++k) {
    Shot lo = fine[k];
    Shot hi = fine[(k + 1) % m];
    if (lo.terminal == hi.terminal) continue;
    double a = lo.param, b = hi.param;
    if (b < a) b += kTwoPi;
    while (b - a > opt_.shooting.bracket_tol) {
      Shot mid = shoot(i, 0.5 * (a + b));
      if (mid.terminal == lo.terminal) {
        lo = std::move(mid);
        a = 0.5 * (a + b);
      } else {
        hi = std::move(mid);
        b = 0.5 * (a + b);
      }
    }
    // The separatrix lingers in the block of a saddle.
    for (const Shot* s : {&lo, &hi}) {
      int best = -1;
      double stay = 0.0;
      for (const auto& [j, v] : s->visits) {
        if (blocks_[j].u() == 0 || v.t_inner < 0) continue;
        if (v.stay > stay) {
          stay = v.stay;
          best = j;
        }
      }
      if (best < 0) continue;
      auto it = f.saddle_hits.find(best);
      if (it == f.saddle_hits.end() || it->second.visits.at(best).stay < stay) f.saddle_hits[best] = *s;
    }
  }
  f.shots = std::move(fine);
  return f;
}

IntersectionResult ConnectionFinder::from_shot(int i, int j, const Shot& s, const Visit& v) const {
  (void)i;
  IntersectionResult r;
  r.eps = eps_;
  r.point = v.t_inner >= 0 ? v.x_inner : v.x_enter;
  r.time = v.t_inner >= 0 ? v.t_inner : v.t_enter;
  r.method = "shooting";
  r.seed_base = s.base;
  r.eta_radius = blocks_[j].R;
  return r;
}

IntersectionResult ConnectionFinder::composed(int i, int j, const IntersectionResult& r0) {
  const IsolatingBlock& bi = blocks_[i];
  const IsolatingBlock& bj = blocks_[j];
  const IntersectionFrame& F = r0.frame;
  const int d = static_cast<int>(r0.point.size());
  const int k1 = F.k1, c = F.c, k2 = F.k2;
  const MatrixXd Mi = F.M.inverse();
  const VectorXd& z0 = r0.point;
  const long steps = std::lround(r0.time / model_->dt());
  const DiskFunction* vdisk = bj.u() > 0 ? stable_disk(j) : nullptr;
  const std::shared_ptr<TimeTMap> vmap = bj.u() > 0 ? block_map(j) : nullptr;

  struct Image {
    VectorXd x;
    HistoryFunction eta;
    VectorXd q;
  };
  auto flow = [&](const VectorXd& base) {
    const LocalPoint p = seed_point(i, base);
    DelayIntegrator in(*model_, HistoryState{bi.to_global(p.y), p.eta, 0.0});
    in.advance(steps);
    Image im;
    im.x = in.value();
    im.eta = in.eta();
    im.q = Mi * (im.x - z0);
    return im;
  };
  VectorXd base = r0.seed_base;
  const double fd = 1e-7 * bi.delta;
  detail::SmallNewton nu, ns;
  // h^u: the point of the transported disk with coordinates (p1, 0, *).
  auto hu = [&](const VectorXd& p1, Image& out) {
    VectorXd target = VectorXd::Zero(k1 + c);
    target.head(k1) = p1;
    auto G = [&](const VectorXd& bv) {
      out = flow(bv);
      return VectorXd(out.q.head(k1 + c) - target);
    };
    VectorXd r;
    if (!nu.solve(G, base, r, 1e-13, 40, fd)) {
      throw Error(ErrorCode::kContractionFailed, "transported disk does not reach the section");
    }
    G(base);
  };
  // h^s: the point of W^s(e_j) with coordinates (*, 0, p3) and memory eta.
  auto hs = [&](const VectorXd& p3, const HistoryFunction& eta, VectorXd p1) {
    if (k1 == 0) return p1;
    auto G = [&](const VectorXd& a) {
      VectorXd q(d);
      q << a, VectorXd::Zero(c), p3;
      const VectorXd y = bj.to_local(VectorXd(z0 + F.M * q));
      return VectorXd(y.head(bj.u()) - vdisk->vertical_at(y.tail(bj.s()), eta, *vmap));
    };
    VectorXd r;
    if (!ns.solve(G, p1, r, 1e-13, 40, 1e-8)) {
      throw Error(ErrorCode::kContractionFailed, "no point of the stable disk on the section");
    }
    return p1;
  };

  IntersectionResult res = r0;
  res.eps = eps_;
  res.method = "composed";
  res.eta_radius = bj.R;
  VectorXd p1 = VectorXd::Zero(k1);
  Image im;
  double prev = 0.0;
  res.contraction_factor = 0.0;
  bool converged = false;
  for (int it = 0; it < 60; ++it) {
    hu(p1, im);
    const VectorXd next = hs(im.q.tail(k2), im.eta, p1);
    const double diff = (next - p1).norm();
    res.iterations = it + 1;
    if (it >= 1 && prev > 1e-13) res.contraction_factor = std::max(res.contraction_factor, diff / prev);
    prev = diff;
    p1 = next;
    if (diff <= 1e-12) {
      converged = true;
      break;
    }
  }
  if (!converged || !(res.contraction_factor < 1.0)) {
    throw Error(ErrorCode::kContractionFailed,
                "factor " + std::to_string(res.contraction_factor));
  }
  hu(p1, im);
  res.point = im.x;
  res.seed_base = base;
  res.eta_norm = std::sqrt(model_->norm_sq(im.eta));
  if (!bj.contains(res.point)) throw Error(ErrorCode::kNoEntry, "intersection left the target block");
  if (!(res.eta_norm < bj.R)) {
    throw Error(ErrorCode::kEtaBallViolated, std::to_string(res.eta_norm) + " >= R = " + std::to_string(bj.R));
  }
  return res;
}

IntersectionResult ConnectionFinder::find_connection(int i, int j, const IntersectionResult* eps0) {
  const int n = static_cast<int>(eqs_.size());
  if (i < 0 || j < 0 || i >= n || j >= n || i == j) {
    throw Error(ErrorCode::kInvalidArgument, "bad equilibrium index");
  }
  if (!(lyapunov(i) > lyapunov(j))) {
    throw Error(ErrorCode::kNoEntry, "L(source) <= L(target)");
  }
  const IsolatingBlock& bi = blocks_[i];
  const IsolatingBlock& bj = blocks_[j];
  const int d = static_cast<int>(eqs_[i].point.size());
  IntersectionResult shot_result;
  bool have_shot = false;
  if (eps_ == 0.0 || opt_.shoot_eps || !eps0) {
    Fan& f = fan(i);
    if (bj.u() == 0) {
      for (const auto& s : f.shots) {
        if (s.terminal == j) {
          shot_result = from_shot(i, j, s, s.visits.at(j));
          have_shot = true;
          break;
        }
      }
    } else {
      auto it = f.saddle_hits.find(j);
      if (it != f.saddle_hits.end()) {
        shot_result = from_shot(i, j, it->second, it->second.visits.at(j));
        have_shot = true;
      }
    }
    if (!have_shot) throw Error(ErrorCode::kNoEntry, "no fan trajectory reaches the target block");
  }

  // Tangent spaces at the intersection point.
  IntersectionResult base = have_shot ? shot_result : *eps0;
  {
    const int u = bi.u();
    MatrixXd tu(d, u);
    const DiskFunction* disk = u < d ? unstable_disk(i) : nullptr;
    for (int k = 0; k < u; ++k) {
      VectorXd w = VectorXd::Zero(d);
      w(k) = 1.0;
      if (disk) {
        const double h = 1e-6 * bi.delta;
        VectorXd bp = base.seed_base, bm = base.seed_base;
        bp(k) += h;
        bm(k) -= h;
        w.tail(bi.s()) = (disk->value_at(bp) - disk->value_at(bm)) / (2.0 * h);
      }
      tu.col(k) = bi.frame.T * w;
    }
    const LocalPoint p = seed_point(i, base.seed_base);
    EmbeddedDisk wu;
    wu.samples.push_back({base.seed_base, bi.to_global(p.y), p.eta, tu});
    wu = transport_disk(wu, *model_, base.time);
    base.point = wu.samples[0].x;
    base.eta_norm = wu.samples[0].eta.size() ? std::sqrt(model_->norm_sq(wu.samples[0].eta)) : 0.0;
    MatrixXd ts;
    if (bj.u() == 0) {
      ts = MatrixXd::Identity(d, d);
    } else {
      const DiskFunction* v = stable_disk(j);
      const auto vmap = block_map(j);
      const VectorXd y = bj.to_local(base.point);
      const int uj = bj.u(), sj = bj.s();
      ts.resize(d, sj);
      for (int k = 0; k < sj; ++k) {
        const double h = 1e-6 * bj.delta;
        VectorXd yp = y.tail(sj), ym = y.tail(sj);
        yp(k) += h;
        ym(k) -= h;
        VectorXd w = VectorXd::Zero(d);
        w.head(uj) = (v->vertical_at(yp, HistoryFunction(), *vmap) -
                      v->vertical_at(ym, HistoryFunction(), *vmap)) / (2.0 * h);
        w(uj + k) = 1.0;
        ts.col(k) = bj.frame.T * w;
      }
    }
    EmbeddedDisk wsd;
    wsd.samples.push_back({VectorXd(), base.point, HistoryFunction(), ts});
    base.frame = build_intersection_frame(wu, wsd, base.point);
    base.transversality_margin = base.frame.margin;
  }
  if (eps_ == 0.0) return base;

  IntersectionResult seed = eps0 ? *eps0 : base;
  if (eps0 && have_shot) {
    // Same section and flight time as the unperturbed connection.
    seed.frame = eps0->frame;
  }
  IntersectionResult res = composed(i, j, seed);
  res.transversality_margin = base.transversality_margin;
  return res;
}

ConnectionGraph connection_graph(const Potential& P, const KernelPair& K, double eps,
                                 const GraphOptions& opt, const ConnectionGraph* reference) {
  ConnectionGraph ref0;
  if (eps > 0 && !reference) {
    ref0 = connection_graph(P, K, 0.0, opt);
    reference = &ref0;
  }
  ConnectionFinder finder(P, K, eps, opt);
  ConnectionGraph g;
  g.eps = eps;
  g.nodes = finder.equilibria();
  g.blocks = finder.blocks();
  const int n = static_cast<int>(g.nodes.size());
  const int d = P.dim;
  for (int i = 0; i < n; ++i) g.lyapunov.push_back(finder.lyapunov(i));
  std::vector<int> to_ref(n, -1);
  if (reference) {
    for (int i = 0; i < n; ++i) {
      double best = 1e300;
      for (int k = 0; k < static_cast<int>(reference->nodes.size()); ++k) {
        const double dist = (reference->nodes[k].point - g.nodes[i].point).norm();
        if (dist < best && dist < g.blocks[i].delta) {
          best = dist;
          to_ref[i] = k;
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j || !(g.lyapunov[i] > g.lyapunov[j])) continue;
      if (g.blocks[i].u() + g.blocks[j].s() < d) continue;
      const IntersectionResult* r0 = nullptr;
      if (reference && to_ref[i] >= 0 && to_ref[j] >= 0) {
        const int k = reference->find_edge(to_ref[i], to_ref[j]);
        if (k >= 0) r0 = &reference->edges[k].result;
      }
      try {
        g.edges.push_back({i, j, finder.find_connection(i, j, r0)});
      } catch (const Error& e) {
        g.absent.push_back({{i, j}, e.what()});
      }
    }
  }
  return g;
}

std::vector<std::pair<int, int>> transitive_closure(const ConnectionGraph& g) {
  const int n = static_cast<int>(g.nodes.size());
  std::vector<std::vector<char>> r(n, std::vector<char>(n, 0));
  for (const auto& e : g.edges) r[e.from][e.to] = 1;
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      if (!r[i][k]) continue;
      for (int j = 0; j < n; ++j) {
        if (r[k][j]) r[i][j] = 1;
      }
    }
  }
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (r[i][j] && i != j) out.push_back({i, j});
    }
  }
  return out;
}

GraphComparison compare_graphs(const ConnectionGraph& g0, const ConnectionGraph& g1,
                               double matching_radius) {
  const int n0 = static_cast<int>(g0.nodes.size());
  const int n1 = static_cast<int>(g1.nodes.size());
  if (matching_radius <= 0) {
    double dmin = 1e300;
    for (int i = 0; i < n0; ++i) {
      for (int j = i + 1; j < n0; ++j) dmin = std::min(dmin, (g0.nodes[i].point - g0.nodes[j].point).norm());
    }
    matching_radius = n0 > 1 ? 0.5 * dmin : 1.0;
  }
  GraphComparison out;
  out.node_map.assign(n0, -1);
  std::vector<int> back(n1, -1);
  for (int i = 0; i < n0; ++i) {
    double best = matching_radius;
    for (int j = 0; j < n1; ++j) {
      const double dist = (g0.nodes[i].point - g1.nodes[j].point).norm();
      if (dist <= best) {
        best = dist;
        out.node_map[i] = j;
      }
    }
    const int j = out.node_map[i];
    if (j < 0) {
      out.notes.push_back("node " + std::to_string(i) + " has no partner");
      continue;
    }
    if (back[j] >= 0) {
      throw Error(ErrorCode::kAmbiguousMatching,
                  "nodes " + std::to_string(back[j]) + " and " + std::to_string(i) + " both match " +
                      std::to_string(j));
    }
    back[j] = i;
  }
  for (int j = 0; j < n1; ++j) {
    if (back[j] < 0) out.notes.push_back("node " + std::to_string(j) + " of the second graph has no partner");
  }
  for (const auto& e : g0.edges) {
    const int a = out.node_map[e.from], b = out.node_map[e.to];
    if (a < 0 || b < 0 || !g1.has_edge(a, b)) out.missing.push_back({e.from, e.to});
  }
  for (const auto& e : g1.edges) {
    const int a = back[e.from], b = back[e.to];
    if (a < 0 || b < 0 || !g0.has_edge(a, b)) out.extra.push_back({a, b});
  }
  const bool nodes_ok = n0 == n1 && out.notes.empty();
  out.isomorphic = nodes_ok && out.missing.empty() && out.extra.empty();
  if (nodes_ok) {
    auto c0 = transitive_closure(g0);
    std::vector<std::pair<int, int>> c1;
    for (const auto& [a, b] : transitive_closure(g1)) c1.push_back({back[a], back[b]});
    std::sort(c0.begin(), c0.end());
    std::sort(c1.begin(), c1.end());
    out.closures_equal = c0 == c1;
  }
  return out;
}

}  // namespace morseflow
