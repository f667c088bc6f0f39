#include "morseflow/flow.h"

#include <atomic>
#include <cmath>

#include "morseflow/errors.h"

namespace morseflow {

namespace {

std::atomic<bool> g_force_direct{false};

int NodeCount(double s_max, double dt) {
  return static_cast<int>(std::floor(s_max / dt + 1e-9)) + 1;
}

bool IsScalarMultiple(const MatrixXd& m, double* scale) {
  const double s = m(0, 0);
  const MatrixXd diff = m - s * MatrixXd::Identity(m.rows(), m.cols());
  if (diff.cwiseAbs().maxCoeff() > 1e-15 * (1.0 + std::abs(s))) return false;
  *scale = s;
  return true;
}

std::vector<double> TrapezoidWeights(int n, double h) {
  std::vector<double> w(n, h);
  if (n == 1) {
    w[0] = 0.0;
    return w;
  }
  w.front() = w.back() = 0.5 * h;
  return w;
}

}  // namespace

MemoryModel::MemoryModel(Potential P, KernelPair kernels, double eps, double dt,
                         int sample_density)
    : P_(std::move(P)), K_(std::move(kernels)), eps_(eps) {
  if (!(dt > 0)) throw Error(ErrorCode::kInvalidArgument, "dt must be positive");
  if (eps < 0) throw Error(ErrorCode::kInvalidArgument, "eps must be >= 0");
  if (K_.A.dim != P_.dim || K_.M.dim != P_.dim) {
    throw Error(ErrorCode::kInvalidArgument, "kernel and potential dimensions differ");
  }
  kc_ = std::make_shared<KernelConstants>(certify_kernels(K_.A, K_.M, sample_density));

  auto tab = std::make_shared<KernelTables>();
  const int d = P_.dim;
  tab->dt = dt;
  tab->dim = d;
  tab->a_nodes = NodeCount(K_.A.s_max, dt);
  tab->m_zero = K_.M.zero;
  tab->m_nodes = tab->m_zero ? 1 : NodeCount(K_.M.s_max, dt);
  tab->nodes = std::max({tab->a_nodes, tab->m_nodes, 2});

  tab->a_scalar = true;
  for (int k = 0; k < tab->a_nodes; ++k) {
    const double s = k * dt;
    tab->A.push_back(K_.A.value(s));
    tab->dA.push_back(K_.A.derivative ? K_.A.derivative(s) : MatrixXd::Zero(d, d));
    double sc = 0.0;
    if (tab->a_scalar && IsScalarMultiple(tab->A.back(), &sc)) {
      tab->a_scale.push_back(sc);
    } else {
      tab->a_scalar = false;
    }
  }
  if (!tab->a_scalar) tab->a_scale.clear();
  tab->m_scalar = true;
  for (int k = 0; k < tab->m_nodes; ++k) {
    tab->M.push_back(tab->m_zero ? MatrixXd::Zero(d, d) : K_.M.value(k * dt));
    double sc = 0.0;
    if (tab->m_scalar && IsScalarMultiple(tab->M.back(), &sc)) {
      tab->m_scale.push_back(sc);
    } else {
      tab->m_scalar = false;
    }
  }
  if (!tab->m_scalar) tab->m_scale.clear();
  tab->wa = TrapezoidWeights(tab->a_nodes, dt);
  tab->wm = TrapezoidWeights(tab->m_nodes, dt);
  tab->coupling_total = MatrixXd::Zero(d, d);
  for (int k = 0; k < tab->m_nodes; ++k) tab->coupling_total += tab->wm[k] * tab->M[k];
  if (!tab->m_zero) tab->m_terms = K_.M.exp_terms;
  tab_ = tab;
}

std::shared_ptr<MemoryModel> MemoryModel::with_eps(double eps) const {
  if (eps < 0) throw Error(ErrorCode::kInvalidArgument, "eps must be >= 0");
  std::shared_ptr<MemoryModel> m(new MemoryModel());
  m->P_ = P_;
  m->K_ = K_;
  m->eps_ = eps;
  m->kc_ = kc_;
  m->tab_ = tab_;
  return m;
}

VectorXd MemoryModel::field(const VectorXd& x) const {
  VectorXd f = P_.grad_F(x);
  if (eps_ != 0.0) f += eps_ * (tab_->coupling_total * x);
  return f;
}

MatrixXd MemoryModel::field_jacobian(const VectorXd& x) const {
  MatrixXd j = P_.hess_F(x);
  if (eps_ != 0.0) j += eps_ * tab_->coupling_total;
  return j;
}

HistoryFunction MemoryModel::zero_history() const {
  return HistoryFunction::Zero(P_.dim, tab_->nodes, tab_->dt);
}

double MemoryModel::norm_sq(const HistoryFunction& eta) const {
  const int n = std::min(eta.size(), tab_->a_nodes);
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    const VectorXd e = eta.values.col(k);
    acc += tab_->wa[k] * (tab_->a_scalar ? tab_->a_scale[k] * e.squaredNorm() : e.dot(tab_->A[k] * e));
  }
  return std::max(acc, 0.0);
}

HistoryState MemoryModel::rest_state(const VectorXd& x) const {
  return HistoryState{x, zero_history(), 0.0};
}

void DelayIntegrator::force_direct_sums(bool on) { g_force_direct = on; }

DelayIntegrator::DelayIntegrator(const MemoryModel& model, const HistoryState& initial,
                                 const std::vector<VariationalState>& tangents)
    : model_(model), tab_(model.tables()) {
  d_ = model.dim();
  blocks_ = 1 + static_cast<int>(tangents.size());
  m_ = d_ * blocks_;
  h_ = tab_.dt;
  eps_ = model.eps();
  t0_ = initial.t;
  K_ = tab_.m_nodes - 1;
  use_memory_ = eps_ != 0.0 && !tab_.m_zero && K_ > 0;
  fast_ = use_memory_ && !tab_.m_terms.empty() && !g_force_direct;
  cap_ = tab_.nodes + 3;
  if (initial.x.size() != d_) {
    throw Error(ErrorCode::kInvalidArgument, "initial point has wrong dimension");
  }
  for (const auto& tg : tangents) {
    if (tg.w.size() != d_) throw Error(ErrorCode::kInvalidArgument, "tangent has wrong dimension");
  }
  if (tab_.a_scalar) {
    const int ka = tab_.a_nodes - 1;
    wa_rev_.resize(ka);
    wda_rev_.resize(ka);
    for (int i = 0; i < ka; ++i) {
      wa_rev_(i) = tab_.wa[ka - i] * tab_.a_scale[ka - i];
      wda_rev_(i) = tab_.wa[ka - i] * tab_.dA[ka - i](0, 0);
    }
  }
  if (use_memory_ && tab_.m_scalar) {
    wm_rev_.resize(K_);
    for (int i = 0; i < K_; ++i) wm_rev_(i) = tab_.wm[K_ - i] * tab_.m_scale[K_ - i];
  }
  init_history(initial, tangents);
}

int DelayIntegrator::slot(long n) const {
  long s = n % cap_;
  if (s < 0) s += cap_;
  return static_cast<int>(s);
}

void DelayIntegrator::init_history(const HistoryState& initial,
                                   const std::vector<VariationalState>& tangents) {
  auto check = [&](const HistoryFunction& eta) {
    if (eta.size() == 0) return;
    if (eta.dim() != d_ || eta.values.cols() != eta.size()) {
      throw Error(ErrorCode::kGridMismatch, "history has wrong shape");
    }
    if (eta.size() > tab_.nodes) {
      throw Error(ErrorCode::kGridMismatch, "history longer than the kernel grid");
    }
    for (int i = 0; i < eta.size(); ++i) {
      if (std::abs(eta.grid[i] - i * h_) > 1e-9 * (1.0 + i * h_)) {
        throw Error(ErrorCode::kGridMismatch, "history grid is not the step grid");
      }
    }
  };
  check(initial.eta);
  for (const auto& tg : tangents) check(tg.theta);

  nodes_.setZero(m_, cap_);
  derivs_.setZero(m_, cap_);
  mids_.setZero(m_, cap_);
  has_deriv_.assign(cap_, 0);

  // Node -k holds z(-s_k) = z0 + eta0(s_k); beyond the table the tail is zero.
  auto pre = [&](long k) -> VectorXd {
    VectorXd z(m_);
    z.head(d_) = initial.x;
    if (k < initial.eta.size()) z.head(d_) += initial.eta.values.col(k);
    for (int j = 0; j < static_cast<int>(tangents.size()); ++j) {
      VectorXd w = tangents[j].w;
      if (k < tangents[j].theta.size()) w += tangents[j].theta.values.col(k);
      z.segment(d_ * (j + 1), d_) = w;
    }
    return z;
  };
  std::vector<VectorXd> past(cap_ + 2);
  for (int k = 0; k < cap_ + 2; ++k) past[k] = pre(k);
  for (int k = 0; k < cap_; ++k) nodes_.col(slot(-k)) = past[k];
  n_ = 0;
  z_ = past[0];

  if (use_memory_) {
    // mid_j sits between nodes j and j+1 (j <= -1); index by k = -j.
    for (int k = 1; k < cap_; ++k) {
      VectorXd mid;
      if (k == 1) {
        mid = 0.0625 * past[3] - 0.3125 * past[2] + 0.9375 * past[1] + 0.3125 * past[0];
      } else {
        mid = (-past[k + 1] + 9.0 * past[k] + 9.0 * past[k - 1] - past[k - 2]) / 16.0;
      }
      mids_.col(slot(-k)) = mid;
    }
    hist_sum_ = VectorXd::Zero(m_);
    if (fast_) {
      const int nt = static_cast<int>(tab_.m_terms.size());
      P_.assign(nt, VectorXd::Zero(m_));
      V_.assign(nt, VectorXd::Zero(m_));
      q_.resize(nt);
      qK_.resize(nt);
      for (int j = 0; j < nt; ++j) {
        q_[j] = std::exp(-tab_.m_terms[j].rate * h_);
        qK_[j] = std::pow(q_[j], K_);
        double qk = 1.0;
        for (int k = 1; k <= K_; ++k) {
          qk *= q_[j];
          P_[j] += qk * past[k];
          V_[j] += qk * mids_.col(slot(-k));
        }
      }
      apply_terms(P_, -K_, false, hist_sum_);
    } else {
      direct_node_sum(-1, hist_sum_);
    }
  }
}

void DelayIntegrator::apply_terms(const std::vector<VectorXd>& sums, long tail, bool mids,
                                  VectorXd& out) const {
  out.setZero(m_);
  const auto tail_vec = mids ? mids_.col(slot(tail)) : nodes_.col(slot(tail));
  for (std::size_t j = 0; j < sums.size(); ++j) {
    const VectorXd v = h_ * sums[j] - (0.5 * h_ * qK_[j]) * tail_vec;
    const MatrixXd& c = tab_.m_terms[j].coeff;
    for (int b = 0; b < blocks_; ++b) out.segment(b * d_, d_) += c * v.segment(b * d_, d_);
  }
}

// sum_{k=1}^K wm_k M_k buf(newest + 1 - k) over the node or mid ring.
static void RingSum(const MatrixXd& buf, const KernelTables& tab, const VectorXd& wm_rev,
                    long start_slot, int K, int cap, int d, int blocks, VectorXd& out) {
  out.setZero(buf.rows());
  if (K <= 0) return;
  if (tab.m_scalar) {
    const long first = std::min<long>(K, cap - start_slot);
    out.noalias() = buf.middleCols(start_slot, first) * wm_rev.head(first);
    if (first < K) out.noalias() += buf.leftCols(K - first) * wm_rev.tail(K - first);
    return;
  }
  for (int i = 0; i < K; ++i) {
    const int k = K - i;
    const long s = (start_slot + i) % cap;
    const MatrixXd wmk = tab.wm[k] * tab.M[k];
    for (int b = 0; b < blocks; ++b) {
      out.segment(b * d, d) += wmk * buf.col(s).segment(b * d, d);
    }
  }
}

void DelayIntegrator::direct_node_sum(long newest, VectorXd& out) const {
  RingSum(nodes_, tab_, wm_rev_, slot(newest + 1 - K_), K_, cap_, d_, blocks_, out);
}

void DelayIntegrator::direct_mid_sum(long newest, VectorXd& out) const {
  RingSum(mids_, tab_, wm_rev_, slot(newest + 1 - K_), K_, cap_, d_, blocks_, out);
}

void DelayIntegrator::rhs(const VectorXd& z, const VectorXd& mem, VectorXd& out) const {
  out.resize(m_);
  const VectorXd x = z.head(d_);
  out.head(d_) = model_.potential().grad_F(x);
  MatrixXd J;
  if (blocks_ > 1) J = model_.potential().hess_F(x);
  for (int b = 1; b < blocks_; ++b) out.segment(b * d_, d_) = J * z.segment(b * d_, d_);
  if (use_memory_) {
    const double w0 = tab_.wm[0];
    for (int b = 0; b < blocks_; ++b) {
      if (tab_.m_scalar) {
        out.segment(b * d_, d_) +=
            eps_ * (w0 * tab_.m_scale[0] * z.segment(b * d_, d_) + mem.segment(b * d_, d_));
      } else {
        out.segment(b * d_, d_) +=
            eps_ * (w0 * tab_.M[0] * z.segment(b * d_, d_) + mem.segment(b * d_, d_));
      }
    }
  }
}

void DelayIntegrator::step() {
  const int sn = slot(n_);
  const VectorXd zn = nodes_.col(sn);
  VectorXd k1, k2, k3, k4, hb, hc;
  const VectorXd empty;
  rhs(zn, use_memory_ ? hist_sum_ : empty, k1);
  derivs_.col(sn) = k1;
  has_deriv_[sn] = 1;

  if (use_memory_) {
    if (n_ >= 1) {
      const int sp = slot(n_ - 1);
      mids_.col(sp) = 0.5 * (nodes_.col(sp) + zn) + (h_ / 8.0) * (derivs_.col(sp) - k1);
      if (fast_) {
        const auto newest_mid = mids_.col(sp);
        const auto tail_mid = mids_.col(slot(n_ - 1 - K_));
        for (std::size_t j = 0; j < V_.size(); ++j) {
          V_[j] = q_[j] * (newest_mid + V_[j] - qK_[j] * tail_mid);
        }
      }
    }
    if (fast_) {
      apply_terms(V_, n_ - K_, true, hb);
    } else {
      direct_mid_sum(n_ - 1, hb);
    }
  }
  rhs(zn + 0.5 * h_ * k1, hb, k2);
  rhs(zn + 0.5 * h_ * k2, hb, k3);
  if (use_memory_) {
    if (fast_) {
      const auto tail = nodes_.col(slot(n_ - K_));
      for (std::size_t j = 0; j < P_.size(); ++j) {
        P_[j] = q_[j] * (zn + P_[j] - qK_[j] * tail);
      }
      apply_terms(P_, n_ + 1 - K_, false, hc);
    } else {
      direct_node_sum(n_, hc);
    }
  }
  rhs(zn + h_ * k3, hc, k4);
  z_ = zn + (h_ / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!z_.allFinite()) {
    throw Error(ErrorCode::kBlowup, "non-finite state at t=" + std::to_string(time()));
  }
  ++n_;
  const int s1 = slot(n_);
  nodes_.col(s1) = z_;
  has_deriv_[s1] = 0;
  if (use_memory_) hist_sum_ = hc;
}

void DelayIntegrator::advance(long steps) {
  for (long i = 0; i < steps; ++i) step();
}

VectorXd DelayIntegrator::value(int block) const { return z_.segment(block * d_, d_); }

VectorXd DelayIntegrator::derivative(int block) const {
  const int sn = slot(n_);
  if (has_deriv_[sn]) return derivs_.col(sn).segment(block * d_, d_);
  VectorXd out;
  const VectorXd empty;
  rhs(z_, use_memory_ ? hist_sum_ : empty, out);
  return out.segment(block * d_, d_);
}

HistoryFunction DelayIntegrator::eta(int block) const {
  HistoryFunction out = HistoryFunction::Zero(d_, tab_.nodes, h_);
  const VectorXd zn = z_.segment(block * d_, d_);
  for (int k = 0; k < tab_.nodes; ++k) {
    out.values.col(k) = nodes_.col(slot(n_ - k)).segment(block * d_, d_) - zn;
  }
  return out;
}

template <typename Fn>
void DelayIntegrator::for_history(int count, Fn&& fn) const {
  // Nodes n-count..n-1 in ring order; fn(slot, len, offset) with offset the
  // index of the first node in the reversed weight table.
  if (count <= 0) return;
  const long first = slot(n_ - count);
  const long len1 = std::min<long>(count, cap_ - first);
  fn(first, len1, 0L);
  if (len1 < count) fn(0L, count - len1, len1);
}

double DelayIntegrator::history_form(int block, const std::vector<MatrixXd>& tab,
                                     const VectorXd* scale_rev, const DelayIntegrator* other,
                                     int other_block) const {
  const int ka = tab_.a_nodes - 1;
  const VectorXd zn = z_.segment(block * d_, d_);
  double acc = 0.0;
  if (scale_rev && !other) {
    for_history(ka, [&](long s, long len, long off) {
      acc += (nodes_.block(block * d_, s, d_, len).colwise() - zn)
                 .colwise()
                 .squaredNorm()
                 .dot(scale_rev->segment(off, len).transpose());
    });
    return acc;
  }
  VectorXd on;
  if (other) on = other->z_.segment(other_block * d_, d_);
  VectorXd e(d_);
  for (int k = 1; k <= ka; ++k) {
    e = nodes_.col(slot(n_ - k)).segment(block * d_, d_) - zn;
    if (other) e -= other->nodes_.col(other->slot(other->n_ - k)).segment(other_block * d_, d_) - on;
    const double q = scale_rev ? (*scale_rev)(ka - k) * e.squaredNorm() : tab_.wa[k] * e.dot(tab[k] * e);
    acc += q;
  }
  return acc;
}

void DelayIntegrator::a_moments(int block, double* norm_sq, VectorXd* a_eta) const {
  if (!tab_.a_scalar) {
    if (norm_sq) *norm_sq = std::max(0.0, history_form(block, tab_.A, nullptr, nullptr, 0));
    if (a_eta) *a_eta = a_eta_integral(block);
    return;
  }
  const int ka = tab_.a_nodes - 1;
  const double* zn = z_.data() + block * d_;
  double acc = 0.0;
  VectorXd av = VectorXd::Zero(d_);
  const long stride = nodes_.rows();
  for_history(ka, [&](long s, long len, long off) {
    const double* p = nodes_.data() + s * stride + block * d_;
    const double* w = wa_rev_.data() + off;
    if (d_ == 1) {
      double s1 = 0.0, s2 = 0.0;
      const double z = zn[0];
      for (long j = 0; j < len; ++j) {
        const double e = p[j * stride] - z;
        const double we = w[j] * e;
        s1 += we;
        s2 += we * e;
      }
      av(0) += s1;
      acc += s2;
      return;
    }
    for (long j = 0; j < len; ++j) {
      for (int i = 0; i < d_; ++i) {
        const double e = p[j * stride + i] - zn[i];
        av(i) += w[j] * e;
        acc += w[j] * e * e;
      }
    }
  });
  if (norm_sq) *norm_sq = std::max(acc, 0.0);
  if (a_eta) *a_eta = av;
}

double DelayIntegrator::eta_norm_sq(int block) const {
  double n = 0.0;
  a_moments(block, &n, nullptr);
  return n;
}

double DelayIntegrator::eta_distance_sq(const DelayIntegrator& other, int block,
                                        int other_block) const {
  if (&other.tab_ != &tab_ && (other.tab_.a_nodes != tab_.a_nodes || other.h_ != h_)) {
    throw Error(ErrorCode::kGridMismatch, "integrators use different grids");
  }
  return std::max(0.0, history_form(block, tab_.A, tab_.a_scalar ? &wa_rev_ : nullptr, &other,
                                    other_block));
}

double DelayIntegrator::da_eta_form(int block) const {
  return history_form(block, tab_.dA, tab_.a_scalar ? &wda_rev_ : nullptr, nullptr, 0);
}

VectorXd DelayIntegrator::a_eta_integral(int block) const {
  const int ka = tab_.a_nodes - 1;
  const VectorXd zn = z_.segment(block * d_, d_);
  VectorXd acc = VectorXd::Zero(d_);
  if (tab_.a_scalar) {
    for_history(ka, [&](long s, long len, long off) {
      acc.noalias() += (nodes_.block(block * d_, s, d_, len).colwise() - zn) * wa_rev_.segment(off, len);
    });
    return acc;
  }
  for (int k = 1; k <= ka; ++k) {
    acc.noalias() += tab_.wa[k] * (tab_.A[k] * (nodes_.col(slot(n_ - k)).segment(block * d_, d_) - zn));
  }
  return acc;
}

VectorXd DelayIntegrator::m_eta_integral(int block) const {
  const VectorXd zn = z_.segment(block * d_, d_);
  VectorXd acc = VectorXd::Zero(d_);
  if (tab_.m_zero) return acc;
  const int km = tab_.m_nodes - 1;
  if (tab_.m_scalar) {
    if (wm_rev_.size() != km) {
      VectorXd w(km);
      for (int i = 0; i < km; ++i) w(i) = tab_.wm[km - i] * tab_.m_scale[km - i];
      for_history(km, [&](long s, long len, long off) {
        acc.noalias() += (nodes_.block(block * d_, s, d_, len).colwise() - zn) * w.segment(off, len);
      });
      return acc;
    }
    for_history(km, [&](long s, long len, long off) {
      acc.noalias() += (nodes_.block(block * d_, s, d_, len).colwise() - zn) * wm_rev_.segment(off, len);
    });
    return acc;
  }
  for (int k = 1; k <= km; ++k) {
    acc.noalias() += tab_.wm[k] * (tab_.M[k] * (nodes_.col(slot(n_ - k)).segment(block * d_, d_) - zn));
  }
  return acc;
}

HistoryState DelayIntegrator::state() const { return HistoryState{value(0), eta(0), time()}; }

VariationalState DelayIntegrator::tangent(int j) const {
  return VariationalState{value(j + 1), eta(j + 1)};
}

}  // namespace morseflow
