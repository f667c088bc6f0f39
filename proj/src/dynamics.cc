#include "morseflow/dynamics.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "morseflow/errors.h"

namespace morseflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Drops the nodes of eta that lie past the kernel horizon.
HistoryFunction Truncate(const HistoryFunction& eta, double s_max) {
  int n = 0;
  while (n < eta.size() && eta.grid[n] <= s_max * (1.0 + 1e-12)) ++n;
  if (n == eta.size()) return eta;
  HistoryFunction out;
  out.grid.assign(eta.grid.begin(), eta.grid.begin() + n);
  out.values = eta.values.leftCols(n);
  out.tail_decay_assumed = eta.tail_decay_assumed;
  return out;
}

double BlowupLimit(const MemoryModel& model, double L0, const VectorXd& x0) {
  const Potential& P = model.potential();
  const KernelConstants& kc = model.constants();
  const double coef = 2.0 * P.quad_gamma - model.eps() * kc.int_norm_M;
  if (P.is_gradient() && coef > 0 && std::isfinite(L0)) {
    const double r = std::sqrt(std::max(0.0, L0 + 2.0 * P.quad_delta) / coef);
    return 10.0 * std::max(r, 1.0);
  }
  return 1e6 * (1.0 + x0.norm());
}

}  // namespace

double LyapunovBudget::eps0(double E) const {
  const double b = G3 * G2 / (2.0 * G1);
  const double a = G4;
  const double c = E * G2 / 4.0;
  if (a <= 0 && b <= 0) return kInf;
  // Positive root of a e^2 + b e - c, written to avoid cancellation.
  return 2.0 * c / (b + std::sqrt(b * b + 4.0 * a * c));
}

LyapunovBudget lyapunov_budget(const Potential&, const KernelConstants& kc) {
  LyapunovBudget b;
  const double da2 = kc.D_A_bar * kc.D_A_bar;
  const double dm2 = kc.D_M_bar * kc.D_M_bar;
  b.G1 = da2 * kc.int_norm_A;
  b.G2 = kc.C_A;
  b.G3 = dm2 * kc.int_norm_A + da2 * kc.int_norm_M;
  b.G4 = dm2 * kc.int_norm_M;
  b.E0 = b.G2 / (2.0 * b.G1);
  return b;
}

double lyapunov_value(const HistoryState& state, double eps, double E, const Potential& P,
                      const KernelSpec& A, const MatrixXd& M_total) {
  if (!P.is_gradient()) throw Error(ErrorCode::kInvalidArgument, "field has no potential");
  double v = -2.0 * P.F(state.x);
  if (E != 0.0 && state.eta.size() > 0) v += E * weighted_norm_sq(Truncate(state.eta, A.s_max), A);
  if (eps != 0.0) v -= eps * state.x.dot(M_total * state.x);
  return v;
}

double lyapunov_lower_bound(const HistoryState& state, double eps, double E, const Potential& P,
                            const KernelSpec& A, const KernelConstants& kc) {
  double eta2 = 0.0;
  if (state.eta.size() > 0) eta2 = weighted_norm_sq(Truncate(state.eta, A.s_max), A);
  return E * eta2 + (2.0 * P.quad_gamma - eps * kc.int_norm_M) * state.x.squaredNorm() -
         2.0 * P.quad_delta;
}

Trajectory integrate(const HistoryState& initial, std::shared_ptr<const MemoryModel> model,
                     double horizon, const IntegrateOptions& opts) {
  if (!(horizon >= 0)) throw Error(ErrorCode::kInvalidArgument, "horizon must be >= 0");
  const MemoryModel& m = *model;
  const double dt = m.dt();
  const long steps = std::lround(horizon / dt);
  const Potential& P = m.potential();
  const KernelTables& tab = m.tables();

  Trajectory tr;
  tr.dt = dt;
  tr.eps = m.eps();
  tr.eta_stride = opts.eta_stride;
  tr.initial = initial;
  tr.model = model;
  const LyapunovBudget budget = lyapunov_budget(P, m.constants());
  tr.lyapunov_E = opts.lyapunov_E > 0 ? opts.lyapunov_E : 0.5 * budget.E0;
  const double E = tr.lyapunov_E;
  const double ca = m.constants().C_A;

  DelayIntegrator in(m, initial);
  auto lyap = [&](const VectorXd& x, double eta2) {
    if (!P.is_gradient()) return std::numeric_limits<double>::quiet_NaN();
    double v = E * eta2 - 2.0 * P.F(x);
    if (m.eps() != 0.0) v -= m.eps() * x.dot(tab.coupling_total * x);
    return v;
  };
  auto record = [&]() {
    tr.times.push_back(in.time());
    tr.x.push_back(in.value());
    tr.xdot.push_back(in.derivative());
    double n2 = 0.0;
    VectorXd ae;
    in.a_moments(0, &n2, &ae);
    tr.eta_norm_sq.push_back(n2);
    tr.a_eta.push_back(std::move(ae));
    tr.lyapunov.push_back(lyap(tr.x.back(), tr.eta_norm_sq.back()));
  };
  auto snapshot = [&]() {
    tr.states.push_back(in.state());
    tr.state_steps.push_back(in.step_index());
  };
  tr.times.reserve(steps + 1);
  record();
  snapshot();
  const double limit = BlowupLimit(m, tr.lyapunov.front(), initial.x);

  for (long n = 1; n <= steps; ++n) {
    in.step();
    record();
    const VectorXd& x = tr.x.back();
    if (opts.check_blowup && x.norm() > limit) {
      throw Error(ErrorCode::kBlowup, "|x| = " + std::to_string(x.norm()) + " exceeds " +
                                          std::to_string(limit) + " at t=" +
                                          std::to_string(in.time()));
    }
    if (opts.check_energy && tab.a_nodes > 1) {
      // One-sided residual across the last step; only gross failures trip.
      const std::size_t k = tr.times.size() - 1;
      const double dN = (tr.eta_norm_sq[k] - tr.eta_norm_sq[k - 1]) / dt;
      const double Nm = 0.5 * (tr.eta_norm_sq[k] + tr.eta_norm_sq[k - 1]);
      const double c = tr.a_eta[k].dot(tr.xdot[k]) + tr.a_eta[k - 1].dot(tr.xdot[k - 1]);
      const double r = dN + ca * Nm + c;
      const double scale = std::abs(dN) + ca * Nm + std::abs(c);
      if (r > std::max(1e-6, 0.5 * scale)) {
        throw Error(ErrorCode::kStepTooLarge,
                    "energy residual " + std::to_string(r) + " at t=" + std::to_string(in.time()));
      }
    }
    if ((opts.eta_stride > 0 && n % opts.eta_stride == 0) || (n == steps && opts.eta_stride <= 0)) {
      snapshot();
    } else if (n == steps && tr.state_steps.back() != n) {
      snapshot();
    }
  }
  return tr;
}

Trajectory integrate(const HistoryState& initial, const Potential& P, const KernelPair& kernels,
                     double eps, double horizon, double dt, const IntegrateOptions& opts) {
  auto model = std::make_shared<MemoryModel>(P, kernels, eps, dt);
  return integrate(initial, model, horizon, opts);
}

std::vector<double> energy_residual(const Trajectory& traj, double C_A) {
  std::vector<double> r;
  const std::size_t n = traj.eta_norm_sq.size();
  if (n < 3) return r;
  r.reserve(n - 2);
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double dN = (traj.eta_norm_sq[k + 1] - traj.eta_norm_sq[k - 1]) / (2.0 * traj.dt);
    r.push_back(dN + C_A * traj.eta_norm_sq[k] + 2.0 * traj.a_eta[k].dot(traj.xdot[k]));
  }
  return r;
}

std::vector<VariationalState> integrate_variational(const Trajectory& base,
                                                    const VariationalState& v0, double eps) {
  if (!base.model) throw Error(ErrorCode::kInvalidArgument, "trajectory has no model");
  if (std::abs(eps - base.eps) > 1e-15 * (1.0 + std::abs(eps))) {
    throw Error(ErrorCode::kInvalidArgument, "eps differs from the base trajectory");
  }
  DelayIntegrator in(*base.model, base.initial, {v0});
  std::vector<VariationalState> out;
  out.reserve(base.state_steps.size());
  for (long s : base.state_steps) {
    if (s < in.step_index()) throw Error(ErrorCode::kGridMismatch, "snapshot steps not increasing");
    in.advance(s - in.step_index());
    if ((in.value() - base.x[s]).norm() > 1e-9 * (1.0 + base.x[s].norm())) {
      throw Error(ErrorCode::kGridMismatch, "base trajectory is not reproduced on its grid");
    }
    out.push_back(in.tangent(0));
  }
  return out;
}

Divergence two_solution_divergence(const Trajectory& a, const Trajectory& b, double eps1,
                                   double eps2) {
  if (!a.model || !b.model || a.dt != b.dt || a.state_steps != b.state_steps) {
    throw Error(ErrorCode::kGridMismatch, "trajectories are not on a common grid");
  }
  const MemoryModel& m = *a.model;
  Divergence out;
  auto dist = [&](const HistoryState& p, const HistoryState& q) {
    HistoryFunction diff = p.eta;
    const HistoryFunction& qe = q.eta;
    if (diff.size() == 0) diff = m.zero_history();
    if (qe.size() > 0) {
      const int n = std::min(diff.size(), qe.size());
      diff.values.leftCols(n) -= qe.values.leftCols(n);
    }
    return (p.x - q.x).norm() + std::sqrt(m.norm_sq(diff));
  };
  const double d0 = dist(a.initial, b.initial) + std::abs(eps1 - eps2);
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    out.times.push_back(a.states[i].t);
    out.measured.push_back(dist(a.states[i], b.states[i]));
  }
  if (d0 == 0.0) return out;

  // Least-squares slope of log(D/D0) against t, then the smallest prefactor
  // that puts the envelope above every sample.
  double st = 0, sy = 0, stt = 0, sty = 0;
  int cnt = 0;
  for (std::size_t i = 0; i < out.times.size(); ++i) {
    if (!(out.measured[i] > 0)) continue;
    const double t = out.times[i] - out.times.front();
    const double y = std::log(out.measured[i] / d0);
    st += t;
    sy += y;
    stt += t * t;
    sty += t * y;
    ++cnt;
  }
  double rate = 0.0;
  if (cnt >= 2 && cnt * stt - st * st > 0) rate = (cnt * sty - st * sy) / (cnt * stt - st * st);
  out.C_rate = std::max(rate, 0.0);
  out.C_pre = 1.0;
  for (std::size_t i = 0; i < out.times.size(); ++i) {
    const double t = out.times[i] - out.times.front();
    out.C_pre = std::max(out.C_pre, out.measured[i] / (d0 * std::exp(out.C_rate * t)));
  }
  return out;
}

}  // namespace morseflow
