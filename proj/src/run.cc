#include "morseflow/run.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "morseflow/errors.h"

namespace morseflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json Vec(const VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json Mat(const MatrixXd& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) a.push_back(Vec(m.row(i).transpose()));
  return a;
}

json Spectrum(const Eigen::VectorXcd& s) {
  json a = json::array();
  for (int i = 0; i < s.size(); ++i) a.push_back({s(i).real(), s(i).imag()});
  return a;
}

std::string Num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json Header(const std::string& command) {
  return json{{"schema_version", kSchemaVersion}, {"command", command}, {"status", "ok"}};
}

void WriteJson(const fs::path& p, const json& j) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorCode::kInvalidArgument, "cannot write " + p.string());
  f << j.dump(2) << "\n";
}

struct Context {
  RunConfig cfg;
  Potential P;
  KernelPair K;
  fs::path out;
  std::ostream* log;
};

SearchBox Box(const Context& c) {
  const double r = c.cfg.box > 0 ? c.cfg.box : std::max(2.0, c.P.diss_R);
  return SearchBox::Cube(c.P.dim, r);
}

std::vector<Equilibrium> Equilibria(const Context& c, const KernelConstants& kc, double eps) {
  EquilibriumOptions eo;
  eo.grid_density = c.cfg.eq_grid;
  return find_equilibria(c.P, kc, eps, Box(c), eo);
}

json EquilibriumJson(const Equilibrium& e, int index) {
  return json{{"index", index},
              {"point", Vec(e.point)},
              {"u", e.dims.unstable()},
              {"s", e.dims.stable()},
              {"dims", {e.dims.u1, e.dims.u2, e.dims.s1, e.dims.s2}},
              {"spectrum", Spectrum(e.spectrum)},
              {"residual", e.residual}};
}

json MarginsJson(const IsolationMargins& m) {
  return json{{"entry", m.entry},
              {"exit", m.exit},
              {"memory", m.memory},
              {"unperturbed_rate", m.unperturbed_rate},
              {"g_bound", m.g_bound},
              {"taylor_remainder", m.taylor_remainder},
              {"samples", m.samples},
              {"certified", m.certified()}};
}

int Simulate(Context& c) {
  const RunConfig& cfg = c.cfg;
  auto model = std::make_shared<MemoryModel>(c.P, c.K, cfg.eps, cfg.dt);
  IntegrateOptions io;
  io.eta_stride = cfg.eta_stride;
  const HistoryState init = make_initial_state(cfg, *model);
  const VectorXd& x0 = init.x;
  const Trajectory tr = integrate(init, model, cfg.horizon, io);
  std::ofstream f(c.out / "trajectory.csv");
  f << "t";
  for (int i = 1; i <= c.P.dim; ++i) f << ",x" << i;
  f << ",norm_eta,lyapunov\n";
  const std::size_t rows = cfg.horizon > 0 ? tr.times.size() : 0;
  for (std::size_t k = 0; k < rows; ++k) {
    f << Num(tr.times[k]);
    for (int i = 0; i < c.P.dim; ++i) f << "," << Num(tr.x[k](i));
    f << "," << Num(std::sqrt(tr.eta_norm_sq[k])) << "," << Num(tr.lyapunov[k]) << "\n";
  }
  json j = Header("simulate");
  j["eps"] = cfg.eps;
  j["dt"] = cfg.dt;
  j["horizon"] = cfg.horizon;
  j["rows"] = rows;
  j["x0"] = Vec(x0);
  j["final"] = Vec(tr.x.back());
  j["lyapunov_E"] = tr.lyapunov_E;
  const auto res = energy_residual(tr, model->constants().C_A);
  double rmax = 0.0;
  for (double r : res) rmax = std::max(rmax, std::abs(r));
  j["max_energy_residual"] = rmax;
  WriteJson(c.out / "simulate.json", j);
  *c.log << "simulate: " << rows << " rows, final x = " << tr.x.back().transpose() << "\n";
  return 0;
}

int EquilibriaCmd(Context& c) {
  const auto kc = certify_kernels(c.K.A, c.K.M);
  json j = Header("equilibria");
  j["eps"] = c.cfg.eps;
  j["equilibria"] = json::array();
  const auto eqs = Equilibria(c, kc, c.cfg.eps);
  for (std::size_t i = 0; i < eqs.size(); ++i) j["equilibria"].push_back(EquilibriumJson(eqs[i], i));
  WriteJson(c.out / "equilibria.json", j);
  *c.log << j["equilibria"].dump(2) << "\n";
  return 0;
}

std::vector<int> Selected(const std::optional<int>& eq, int n) {
  std::vector<int> idx;
  if (eq) {
    if (*eq < 0 || *eq >= n) {
      throw Error(ErrorCode::kInvalidArgument,
                  "--eq " + std::to_string(*eq) + " out of range (" + std::to_string(n) + " equilibria)");
    }
    idx.push_back(*eq);
  } else {
    for (int i = 0; i < n; ++i) idx.push_back(i);
  }
  return idx;
}

BlockOptions Blocks(const Context& c) {
  BlockOptions bo = c.cfg.block;
  bo.seed = c.cfg.seed;
  bo.verify_eps = {0.0};
  if (c.cfg.eps > 0) bo.verify_eps.push_back(c.cfg.eps);
  return bo;
}

int BlockCmd(Context& c, const std::optional<int>& eq) {
  const auto kc = certify_kernels(c.K.A, c.K.M);
  const auto eqs = Equilibria(c, kc, 0.0);
  const BlockOptions bo = Blocks(c);
  json j = Header("block");
  j["eps"] = c.cfg.eps;
  j["blocks"] = json::array();
  bool ok = true;
  for (int i : Selected(eq, eqs.size())) {
    const IsolatingBlock b = build_block(eqs[i], eqs, c.P, kc, bo);
    json jb{{"index", i}, {"center", Vec(b.center.point)}, {"u", b.u()}, {"s", b.s()},
            {"kappa", b.frame.kappa}, {"delta", b.delta}, {"R", b.R}, {"T", Mat(b.frame.T)},
            {"eigen_frame", b.frame.eigen_path}};
    jb["verification"] = json::array();
    bool block_ok = true;
    for (double e : bo.verify_eps) {
      const IsolationMargins m = verify_isolation(b, e, c.P, kc, bo.n_boundary_samples, bo.seed);
      json jm = MarginsJson(m);
      jm["eps"] = e;
      block_ok = block_ok && m.certified();
      try {
        const ConeCertificate cc = cone_certificate(b, e, b.cone.E, c.P, kc);
        jm["cone"] = json{{"E", b.cone.E}, {"G", cc.G}, {"E_bound", cc.E_bound},
                          {"df_norm", cc.df_norm}, {"B", Mat(cc.B)}, {"positive", cc.positive}};
        block_ok = block_ok && cc.positive;
      } catch (const Error& err) {
        jm["cone"] = json{{"positive", false}, {"error", err.what()}};
        block_ok = false;
      }
      jb["verification"].push_back(jm);
    }
    jb["cone"] = json{{"Q", Vec(b.cone.Q)}, {"E", b.cone.E}, {"G", b.cone.G},
                      {"L_param", b.cone.L_param}, {"Delta", b.cone.Delta}};
    jb["E"] = b.cone.E;
    jb["G"] = b.cone.G;
    jb["L0"] = b.cone.L_param;
    jb["Delta"] = b.cone.Delta;
    jb["margins"] = json{{"entry", b.margins.entry}, {"exit", b.margins.exit},
                         {"memory", b.margins.memory}, {"cone_det", b.margins.cone_det}};
    jb["samples"] = b.margins.samples;
    // E_max of the parameterized budget is the E bound of this same block.
    jb["E_max_block_dependent"] = true;
    jb["certified"] = block_ok;
    ok = ok && block_ok;
    j["blocks"].push_back(jb);
  }
  if (!ok) j["status"] = "failed";
  WriteJson(c.out / "block.json", j);
  *c.log << j["blocks"].dump(2) << "\n";
  return ok ? 0 : 1;
}

int ManifoldCmd(Context& c, const std::optional<int>& eq, const std::string& side) {
  if (side != "unstable" && side != "stable") {
    throw Error(ErrorCode::kInvalidArgument, "--side must be unstable or stable");
  }
  const auto kc = certify_kernels(c.K.A, c.K.M);
  const auto eqs = Equilibria(c, kc, 0.0);
  if (!eq) throw Error(ErrorCode::kInvalidArgument, "manifold needs --eq");
  const int i = Selected(eq, eqs.size())[0];
  const IsolatingBlock b = build_block(eqs[i], eqs, c.P, kc, Blocks(c));
  auto model = std::make_shared<MemoryModel>(c.P, c.K, c.cfg.eps, c.cfg.dt);
  std::shared_ptr<TimeTMap> map;
  TransformConstants tc;
  if (c.cfg.manifold_L > 0) {
    map = std::make_shared<TimeTMap>(make_time_T_map(b, model, c.cfg.manifold_T));
    tc = transform_constants(*map, c.cfg.manifold_L, 64, true);
  } else {
    auto pt = prepare_transform(b, model, c.cfg.manifold_T);
    map = pt.map;
    tc = pt.constants;
  }
  ManifoldOptions mo;
  mo.grid = c.cfg.manifold_grid;
  mo.tol = c.cfg.manifold_tol;
  mo.max_iters = c.cfg.manifold_max_iters;
  mo.L = tc.L;
  const DiskFunction d = side == "unstable" ? unstable_manifold(*map, mo) : stable_manifold(*map, mo);
  const int base_dim = d.grid.dim;
  {
    std::ofstream f(c.out / "manifold.csv");
    const int np = d.n_probes();
    // Unstable side: fiber-contraction slopes. Stable side: differences of
    // the zero-probe section along the base grid.
    std::vector<MatrixXd> slopes(d.grid.size(), MatrixXd::Zero(d.fiber_dim, base_dim));
    if (side == "unstable" && base_dim > 0 && d.fiber_dim > 0) {
      slopes = derivative_field(*map, d).slopes;
    } else if (base_dim > 0 && d.fiber_dim > 0) {
      for (int n = 0; n < d.grid.size(); ++n) {
        for (int k = 0; k < base_dim; ++k) {
          const int lo = d.grid.neighbour(n, k, -1), hi = d.grid.neighbour(n, k, 1);
          const int a = lo >= 0 ? lo : n, b2 = hi >= 0 ? hi : n;
          const double span = (a == n || b2 == n) ? d.grid.h() : 2.0 * d.grid.h();
          slopes[n].col(k) = (d.values[b2 * np] - d.values[a * np]) / span;
        }
      }
    }
    f << "node,probe";
    for (int k = 0; k < base_dim; ++k) f << ",base" << k;
    for (int k = 0; k < d.fiber_dim; ++k) f << ",fiber" << k;
    for (int r = 0; r < d.fiber_dim; ++r) {
      for (int k = 0; k < base_dim; ++k) f << ",slope" << r << "_" << k;
    }
    for (int k = 1; k <= c.P.dim; ++k) f << ",x" << k;
    f << ",norm_eta\n";
    for (int n = 0; n < d.grid.size(); ++n) {
      const VectorXd base = d.grid.node(n);
      for (int p = 0; p < np; ++p) {
        const VectorXd& fib = d.values[n * np + p];
        VectorXd y(c.P.dim);
        if (side == "unstable") {
          y << base, fib;
        } else {
          y << fib, base;
        }
        const VectorXd x = b.to_global(y);
        double en = 0.0;
        if (side == "unstable" && !d.eta.empty() && d.eta[n].size() > 0) en = std::sqrt(model->norm_sq(d.eta[n]));
        if (side == "stable" && d.probes[p].size() > 0) en = std::sqrt(model->norm_sq(d.probes[p]));
        f << n << "," << p;
        for (int k = 0; k < base_dim; ++k) f << "," << Num(base(k));
        for (int k = 0; k < d.fiber_dim; ++k) f << "," << Num(fib(k));
        for (int r = 0; r < d.fiber_dim; ++r) {
          for (int k = 0; k < base_dim; ++k) f << "," << Num(slopes[n](r, k));
        }
        for (int k = 0; k < c.P.dim; ++k) f << "," << Num(x(k));
        f << "," << Num(en) << "\n";
      }
    }
  }
  json j = Header("manifold");
  j["eps"] = c.cfg.eps;
  j["equilibrium"] = i;
  j["side"] = side;
  j["T"] = map->T();
  j["constants"] = json{{"xi", tc.xi}, {"mu", tc.mu}, {"beta", tc.beta}, {"xi1", tc.xi1},
                        {"mu1", tc.mu1}, {"L", tc.L}, {"eta_probed", tc.eta_probed},
                        {"violated", tc.violated()}};
  j["grid"] = json{{"dim", d.grid.dim}, {"n", d.grid.n}, {"r", d.grid.r}};
  j["iterations"] = d.iterations;
  j["final_change"] = d.final_change;
  j["max_ratio"] = d.max_ratio;
  j["invariance_defect"] = d.invariance_defect;
  j["lip_estimate"] = d.lip_estimate;
  j["memory"] = map->memory();
  WriteJson(c.out / "manifold.json", j);
  *c.log << "manifold " << side << " at " << i << ": " << d.iterations << " iterations, defect "
         << d.invariance_defect << "\n";
  return tc.violated().empty() ? 0 : 1;
}

json GraphJson(const ConnectionGraph& g) {
  json j{{"eps", g.eps}};
  j["nodes"] = json::array();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    json n = EquilibriumJson(g.nodes[i], i);
    n["lyapunov"] = g.lyapunov[i];
    n["delta"] = g.blocks[i].delta;
    n["R"] = g.blocks[i].R;
    j["nodes"].push_back(n);
  }
  j["edges"] = json::array();
  for (const auto& e : g.edges) {
    const auto& r = e.result;
    j["edges"].push_back(json{{"from", e.from}, {"to", e.to}, {"method", r.method},
                              {"point", Vec(r.point)}, {"time", r.time},
                              {"contraction_factor", r.contraction_factor},
                              {"transversality_margin", r.transversality_margin},
                              {"iterations", r.iterations}, {"eta_norm", r.eta_norm},
                              {"eta_radius", r.eta_radius},
                              {"frame", {r.frame.k1, r.frame.c, r.frame.k2}}});
  }
  j["absent"] = json::array();
  for (const auto& [pair, reason] : g.absent) {
    j["absent"].push_back(json{{"from", pair.first}, {"to", pair.second}, {"reason", reason}});
  }
  j["closure"] = json::array();
  for (const auto& [a, b] : transitive_closure(g)) j["closure"].push_back({a, b});
  return j;
}

void WriteDot(const fs::path& p, const ConnectionGraph& g) {
  std::ofstream f(p);
  f << "digraph morse {\n  label=\"eps = " << Num(g.eps) << "\";\n";
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    std::ostringstream pt;
    pt << std::setprecision(4);
    for (int k = 0; k < g.nodes[i].point.size(); ++k) pt << (k ? "," : "") << g.nodes[i].point(k);
    f << "  n" << i << " [label=\"" << i << " (" << pt.str() << ") u=" << g.blocks[i].u() << "\"];\n";
  }
  for (const auto& e : g.edges) f << "  n" << e.from << " -> n" << e.to << ";\n";
  f << "}\n";
}

std::vector<double> EpsList(const Context& c) {
  if (!c.cfg.eps_list.empty()) return c.cfg.eps_list;
  return {c.cfg.eps};
}

// The first graph is the reference; with a positive first eps an eps = 0
// reference is computed for seeding but not reported.
std::vector<ConnectionGraph> Sweep(const Context& c, const std::vector<double>& eps) {
  const GraphOptions go = make_graph_options(c.cfg);
  std::vector<ConnectionGraph> out(eps.size());
  std::size_t first = 0;
  ConnectionGraph zero;
  const ConnectionGraph* ref = nullptr;
  for (std::size_t k = 0; k < eps.size(); ++k) {
    if (eps[k] == 0.0) {
      out[k] = connection_graph(c.P, c.K, 0.0, go);
      ref = &out[k];
      first = k;
      break;
    }
  }
  if (!ref) {
    zero = connection_graph(c.P, c.K, 0.0, go);
    ref = &zero;
    first = eps.size();
  }
  std::vector<std::size_t> todo;
  for (std::size_t k = 0; k < eps.size(); ++k) {
    if (k != first) todo.push_back(k);
  }
  const int threads = std::min<int>(thread_cap(), todo.size());
  if (threads <= 1) {
    for (std::size_t k : todo) out[k] = connection_graph(c.P, c.K, eps[k], go, ref);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(todo.size());
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t q = t; q < todo.size(); q += threads) {
          try {
            out[todo[q]] = connection_graph(c.P, c.K, eps[todo[q]], go, ref);
          } catch (...) {
            errs[q] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errs) {
      if (e) std::rethrow_exception(e);
    }
  }
  return out;
}

int GraphCmd(Context& c) {
  const auto eps = EpsList(c);
  const auto graphs = Sweep(c, eps);
  json j = Header("graph");
  j["graphs"] = json::array();
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    j["graphs"].push_back(GraphJson(graphs[k]));
    const std::string name = graphs.size() == 1 ? "graph.dot" : "graph_" + std::to_string(k) + ".dot";
    WriteDot(c.out / name, graphs[k]);
    *c.log << "graph eps=" << eps[k] << ": " << graphs[k].nodes.size() << " nodes, "
           << graphs[k].edges.size() << " edges\n";
  }
  WriteJson(c.out / "graph.json", j);
  return 0;
}

int CompareCmd(Context& c) {
  const auto eps = EpsList(c);
  if (eps.size() < 2) throw Error(ErrorCode::kInvalidArgument, "compare needs at least two eps values");
  const auto graphs = Sweep(c, eps);
  json j = Header("compare");
  j["eps_list"] = eps;
  j["comparisons"] = json::array();
  bool all = true;
  for (std::size_t k = 1; k < graphs.size(); ++k) {
    const GraphComparison cmp = compare_graphs(graphs[0], graphs[k], c.cfg.matching_radius);
    json jc{{"eps0", eps[0]}, {"eps1", eps[k]}, {"isomorphic", cmp.isomorphic},
            {"closures_equal", cmp.closures_equal}, {"node_map", cmp.node_map},
            {"edges0", graphs[0].edges.size()}, {"edges1", graphs[k].edges.size()}};
    jc["missing"] = json::array();
    for (const auto& [a, b] : cmp.missing) jc["missing"].push_back({a, b});
    jc["extra"] = json::array();
    for (const auto& [a, b] : cmp.extra) jc["extra"].push_back({a, b});
    jc["notes"] = cmp.notes;
    jc["report"] = cmp.isomorphic ? "identical" : "different";
    all = all && cmp.isomorphic;
    j["comparisons"].push_back(jc);
    WriteDot(c.out / ("compare_" + std::to_string(k) + ".dot"), graphs[k]);
  }
  WriteDot(c.out / "compare_0.dot", graphs[0]);
  j["report"] = all ? "identical" : "different";
  if (!all) j["status"] = "failed";
  WriteJson(c.out / "compare.json", j);
  *c.log << "compare: " << (all ? "identical" : "different") << "\n";
  return all ? 0 : 1;
}

int CertifyKernels(Context& c) {
  json j = Header("certify-kernels");
  j["A"] = json{{"family", c.cfg.A.family}, {"kappa", c.cfg.A.kappa}, {"scale", c.cfg.A.scale}};
  j["M"] = json{{"family", c.cfg.M.family}, {"kappa", c.cfg.M.kappa}, {"scale", c.cfg.M.scale}};
  try {
    const auto kc = certify_kernels(c.K.A, c.K.M);
    j["constants"] = json{{"C_A", kc.C_A}, {"D_A_bar", kc.D_A_bar}, {"D_A", kc.D_A},
                          {"D_M_bar", kc.D_M_bar}, {"D_M", kc.D_M},
                          {"int_norm_A", kc.int_norm_A}, {"int_norm_M", kc.int_norm_M},
                          {"M_total", Mat(kc.M_total)}, {"samples", kc.samples}};
    WriteJson(c.out / "kernels.json", j);
    *c.log << "certify-kernels: C_A=" << kc.C_A << " D_A_bar=" << kc.D_A_bar << "\n";
    return 0;
  } catch (const Error& e) {
    j["status"] = "failed";
    j["error"] = e.what();
    WriteJson(c.out / "kernels.json", j);
    *c.log << "certify-kernels: " << e.what() << "\n";
    return 1;
  }
}

int LyapunovReport(Context& c) {
  const auto kc = certify_kernels(c.K.A, c.K.M);
  const LyapunovBudget lb = lyapunov_budget(c.P, kc);
  const double E = 0.5 * lb.E0;
  const double eps0 = lb.eps0(E);
  json j = Header("lyapunov-report");
  j["budget"] = json{{"G1", lb.G1}, {"G2", lb.G2}, {"G3", lb.G3}, {"G4", lb.G4}, {"E0", lb.E0}};
  j["E"] = E;
  j["eps0"] = eps0;
  j["eps"] = c.cfg.eps;
  auto model = std::make_shared<MemoryModel>(c.P, c.K, c.cfg.eps, c.cfg.dt);
  std::mt19937_64 rng(c.cfg.seed);
  const SearchBox box = Box(c);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  IntegrateOptions io;
  io.lyapunov_E = E;
  double worst = 0.0;
  json runs = json::array();
  for (int r = 0; r < c.cfg.trajectories; ++r) {
    VectorXd x0(c.P.dim);
    for (int k = 0; k < c.P.dim; ++k) x0(k) = box.lo(k) + (box.hi(k) - box.lo(k)) * U(rng);
    const Trajectory tr = integrate(model->rest_state(x0), model, c.cfg.horizon, io);
    double v = 0.0;
    for (std::size_t k = 1; k < tr.lyapunov.size(); ++k) v = std::max(v, tr.lyapunov[k] - tr.lyapunov[k - 1]);
    worst = std::max(worst, v);
    runs.push_back(json{{"x0", Vec(x0)}, {"max_increase", v},
                        {"L_start", tr.lyapunov.front()}, {"L_end", tr.lyapunov.back()}});
  }
  j["trajectories"] = runs;
  j["max_increase"] = worst;
  const bool ok = c.cfg.eps <= eps0 && worst <= 1e-6;
  if (!ok) j["status"] = "failed";
  WriteJson(c.out / "lyapunov.json", j);
  *c.log << "lyapunov-report: eps0=" << eps0 << " max increase " << worst << "\n";
  return ok ? 0 : 1;
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s = {"simulate", "equilibria", "block", "manifold",
                                              "graph", "compare", "certify-kernels",
                                              "lyapunov-report"};
  return s;
}

int thread_cap() {
  const char* v = std::getenv("MORSEFLOW_THREADS");
  if (!v || !*v) return 1;
  const int n = std::atoi(v);
  const int hw = std::max(1u, std::thread::hardware_concurrency());
  return std::clamp(n, 1, hw);
}

int run(const std::string& subcommand, const RunConfig& cfg_in, const RunFlags& flags,
        std::ostream& log) {
  Context c;
  c.cfg = cfg_in;
  if (flags.eps) {
    if (!(*flags.eps >= 0)) throw Error(ErrorCode::kConfigError, "--eps must be non-negative");
    c.cfg.eps = *flags.eps;
  }
  if (flags.eps_list) {
    for (double e : *flags.eps_list) {
      if (!(e >= 0)) throw Error(ErrorCode::kConfigError, "--eps-list values must be non-negative");
    }
    c.cfg.eps_list = *flags.eps_list;
  }
  if (flags.seed) c.cfg.seed = *flags.seed;
  if (flags.out) c.cfg.out = *flags.out;
  validate_config(c.cfg);
  c.P = make_potential(c.cfg);
  c.K = make_kernels(c.cfg);
  c.out = c.cfg.out;
  c.log = &log;
  fs::create_directories(c.out);
  if (subcommand == "simulate") return Simulate(c);
  if (subcommand == "equilibria") return EquilibriaCmd(c);
  if (subcommand == "block") return BlockCmd(c, flags.eq);
  if (subcommand == "manifold") return ManifoldCmd(c, flags.eq, flags.side.value_or("unstable"));
  if (subcommand == "graph") return GraphCmd(c);
  if (subcommand == "compare") return CompareCmd(c);
  if (subcommand == "certify-kernels") return CertifyKernels(c);
  if (subcommand == "lyapunov-report") return LyapunovReport(c);
  throw Error(ErrorCode::kInvalidArgument, "unknown subcommand '" + subcommand + "'");
}

int run(const std::string& subcommand, const std::string& config_path, const RunFlags& flags,
        std::ostream& log, std::ostream& err) {
  try {
    const RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    return run(subcommand, cfg, flags, log);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return e.code() == ErrorCode::kConfigError || e.code() == ErrorCode::kInvalidArgument ? 2 : 1;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return 1;
  }
}

}  // namespace morseflow
