#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "morseflow/connections.h"
#include "morseflow/errors.h"
#include "morseflow/run.h"

namespace py = pybind11;
using namespace morseflow;

namespace {

// Values may be numbers, strings or sequences of numbers.
std::string ValueText(const py::handle& v) {
  if (py::isinstance<py::str>(v)) return v.cast<std::string>();
  if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "1" : "0";
  if (py::isinstance<py::int_>(v)) return std::to_string(v.cast<long long>());
  if (py::isinstance<py::float_>(v)) {
    std::ostringstream s;
    s.precision(17);
    s << v.cast<double>();
    return s.str();
  }
  if (py::isinstance<py::sequence>(v)) {
    std::string out;
    for (const auto& item : v.cast<py::sequence>()) {
      if (!out.empty()) out += ",";
      out += ValueText(item);
    }
    return out;
  }
  throw Error(ErrorCode::kConfigError, "unsupported value type " + std::string(py::str(v.get_type())));
}

RunConfig FromDict(const py::dict& d) {
  RunConfig c;
  for (const auto& [k, v] : d) set_config_value(c, k.cast<std::string>(), ValueText(v));
  validate_config(c);
  return c;
}

py::dict EquilibriumDict(const Equilibrium& e) {
  py::dict r;
  r["point"] = e.point;
  r["eps"] = e.eps;
  r["u"] = e.dims.unstable();
  r["s"] = e.dims.stable();
  r["spectrum"] = e.spectrum;
  r["residual"] = e.residual;
  return r;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Connection graphs of gradient flows with distributed memory";

  // Messages start with the error code name ("NoEntry: ...").
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.attr("schema_version") = kSchemaVersion;
  m.def("subcommands", &subcommands);

  m.def(
      "parse_config",
      [](const std::string& text, const std::string& source) {
        std::istringstream in(text);
        const RunConfig c = parse_config(in, source);
        py::dict r;
        r["potential"] = c.potential;
        r["dim"] = c.dim;
        r["eps"] = c.eps;
        r["eps_list"] = c.eps_list;
        r["dt"] = c.dt;
        r["horizon"] = c.horizon;
        r["seed"] = c.seed;
        r["out"] = c.out;
        return r;
      },
      py::arg("text"), py::arg("source") = "<string>");

  m.def(
      "run",
      [](const std::string& sub, const py::dict& config, const std::string& out,
         std::optional<double> eps, std::optional<std::vector<double>> eps_list, std::optional<int> eq,
         std::optional<std::string> side, std::optional<std::uint64_t> seed) {
        RunConfig c = FromDict(config);
        RunFlags f;
        f.eps = eps;
        f.eps_list = eps_list;
        f.eq = eq;
        f.side = side;
        f.seed = seed;
        f.out = out;
        std::ostringstream log;
        int code;
        {
          py::gil_scoped_release release;
          code = run(sub, c, f, log);
        }
        return py::make_tuple(code, log.str());
      },
      py::arg("subcommand"), py::arg("config") = py::dict(), py::arg("out") = ".",
      py::arg("eps") = py::none(), py::arg("eps_list") = py::none(), py::arg("eq") = py::none(),
      py::arg("side") = py::none(), py::arg("seed") = py::none(),
      "Runs a subcommand; returns (exit code, log).");

  m.def(
      "certify_kernels",
      [](const py::dict& config) {
        const RunConfig c = FromDict(config);
        const KernelPair K = make_kernels(c);
        const KernelConstants kc = certify_kernels(K.A, K.M);
        py::dict r;
        r["C_A"] = kc.C_A;
        r["D_A_bar"] = kc.D_A_bar;
        r["D_A"] = kc.D_A;
        r["D_M_bar"] = kc.D_M_bar;
        r["D_M"] = kc.D_M;
        r["int_norm_A"] = kc.int_norm_A;
        r["int_norm_M"] = kc.int_norm_M;
        r["M_total"] = kc.M_total;
        return r;
      },
      py::arg("config") = py::dict());

  m.def(
      "simulate",
      [](const py::dict& config) {
        const RunConfig c = FromDict(config);
        auto model = std::make_shared<MemoryModel>(make_potential(c), make_kernels(c), c.eps, c.dt);
        const HistoryState s0 = make_initial_state(c, *model);
        Trajectory tr;
        {
          py::gil_scoped_release release;
          tr = integrate(s0, model, c.horizon);
        }
        MatrixXd x(tr.x.size(), c.dim);
        for (std::size_t k = 0; k < tr.x.size(); ++k) x.row(k) = tr.x[k].transpose();
        py::dict r;
        r["t"] = VectorXd(Eigen::Map<const VectorXd>(tr.times.data(), tr.times.size()));
        r["x"] = x;
        r["eta_norm_sq"] = VectorXd(Eigen::Map<const VectorXd>(tr.eta_norm_sq.data(), tr.eta_norm_sq.size()));
        r["lyapunov"] = VectorXd(Eigen::Map<const VectorXd>(tr.lyapunov.data(), tr.lyapunov.size()));
        return r;
      },
      py::arg("config") = py::dict());

  m.def(
      "equilibria",
      [](const py::dict& config) {
        const RunConfig c = FromDict(config);
        const Potential P = make_potential(c);
        const KernelPair K = make_kernels(c);
        const auto kc = certify_kernels(K.A, K.M);
        const double r = c.box > 0 ? c.box : std::max(2.0, P.diss_R);
        EquilibriumOptions eo;
        eo.grid_density = c.eq_grid;
        py::list out;
        for (const auto& e : find_equilibria(P, kc, c.eps, SearchBox::Cube(P.dim, r), eo))
          out.append(EquilibriumDict(e));
        return out;
      },
      py::arg("config") = py::dict());

  m.def(
      "connection_graph",
      [](const py::dict& config) {
        const RunConfig c = FromDict(config);
        const Potential P = make_potential(c);
        const KernelPair K = make_kernels(c);
        const GraphOptions go = make_graph_options(c);
        ConnectionGraph g;
        {
          py::gil_scoped_release release;
          g = connection_graph(P, K, c.eps, go);
        }
        py::dict r;
        py::list nodes, edges;
        for (const auto& e : g.nodes) nodes.append(EquilibriumDict(e));
        for (const auto& e : g.edges) {
          py::dict d;
          d["from"] = e.from;
          d["to"] = e.to;
          d["point"] = e.result.point;
          d["contraction_factor"] = e.result.contraction_factor;
          d["transversality_margin"] = e.result.transversality_margin;
          d["method"] = e.result.method;
          edges.append(d);
        }
        r["eps"] = g.eps;
        r["nodes"] = nodes;
        r["edges"] = edges;
        r["lyapunov"] = g.lyapunov;
        return r;
      },
      py::arg("config") = py::dict());
}
