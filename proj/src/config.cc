#include "morseflow/config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "morseflow/errors.h"

namespace morseflow {

namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Thrown inside the setters; the parser adds the location.
struct BadValue {
  std::string what;
};

double Number(const std::string& v) {
  const std::string t = Trim(v);
  double x = 0.0;
  const auto* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, x);
  if (t.empty() || ec != std::errc() || p != end) throw BadValue{"not a number: '" + t + "'"};
  return x;
}

long Integer(const std::string& v) {
  const double x = Number(v);
  if (x != std::floor(x)) throw BadValue{"not an integer: '" + Trim(v) + "'"};
  return static_cast<long>(x);
}

double Positive(const std::string& v) {
  const double x = Number(v);
  if (!(x > 0)) throw BadValue{"must be positive"};
  return x;
}

double NonNegative(const std::string& v) {
  const double x = Number(v);
  if (!(x >= 0)) throw BadValue{"must be non-negative"};
  return x;
}

int PositiveInt(const std::string& v) {
  const long x = Integer(v);
  if (x <= 0) throw BadValue{"must be a positive integer"};
  return static_cast<int>(x);
}

std::vector<double> ParseList(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  if (Trim(text).empty()) return out;
  while (std::getline(ss, item, ',')) {
    if (Trim(item).empty()) throw BadValue{"empty list entry in '" + Trim(text) + "'"};
    out.push_back(Number(item));
  }
  return out;
}

MatrixXd Matrix(const std::string& v) {
  std::vector<std::vector<double>> rows;
  std::stringstream ss(v);
  std::string row;
  while (std::getline(ss, row, ';')) rows.push_back(ParseList(row));
  if (rows.empty() || rows[0].empty()) throw BadValue{"empty matrix"};
  MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw BadValue{"ragged matrix rows"};
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

void KernelKeys(std::map<std::string, Setter>& k, const std::string& name, KernelConfig RunConfig::*field) {
  k["kernel." + name + ".family"] = [field](RunConfig& c, const std::string& v) {
    std::string f = Trim(v);
    if (f == "exp_scalar") f = "exp";
    if (f != "exp" && f != "zero" && f != "table") {
      throw BadValue{"unknown kernel family '" + f + "' (exp, exp_scalar, zero, table)"};
    }
    (c.*field).family = f;
  };
  k["kernel." + name + ".s"] = [field](RunConfig& c, const std::string& v) { (c.*field).s = ParseList(v); };
  k["kernel." + name + ".values"] = [field](RunConfig& c, const std::string& v) { (c.*field).values = ParseList(v); };
  k["kernel." + name + ".kappa"] = [field](RunConfig& c, const std::string& v) { (c.*field).kappa = Positive(v); };
  k["kernel." + name + ".scale"] = [field](RunConfig& c, const std::string& v) { (c.*field).scale = Number(v); };
  k["kernel." + name + ".s_max"] = [field](RunConfig& c, const std::string& v) { (c.*field).s_max = NonNegative(v); };
}

const std::map<std::string, Setter>& Keys() {
  static const std::map<std::string, Setter> keys = [] {
    std::map<std::string, Setter> k;
    k["potential.family"] = [](RunConfig& c, const std::string& v) {
      const std::string f = Trim(v);
      if (f != "quartic" && f != "linear") throw BadValue{"unknown potential family '" + f + "' (quartic, linear)"};
      c.potential = f;
    };
    k["potential.dim"] = [](RunConfig& c, const std::string& v) { c.dim = PositiveInt(v); };
    k["potential.a"] = [](RunConfig& c, const std::string& v) { c.a = Number(v); };
    k["potential.b"] = [](RunConfig& c, const std::string& v) { c.b = Number(v); };
    k["potential.c"] = [](RunConfig& c, const std::string& v) { c.c = Number(v); };
    k["potential.matrix"] = [](RunConfig& c, const std::string& v) { c.matrix = Matrix(v); };
    KernelKeys(k, "A", &RunConfig::A);
    KernelKeys(k, "M", &RunConfig::M);
    k["eps"] = [](RunConfig& c, const std::string& v) { c.eps = NonNegative(v); };
    k["eps_list"] = [](RunConfig& c, const std::string& v) {
      c.eps_list = ParseList(v);
      for (double e : c.eps_list) {
        if (!(e >= 0)) throw BadValue{"eps values must be non-negative"};
      }
    };
    k["seed"] = [](RunConfig& c, const std::string& v) {
      const long s = Integer(v);
      if (s < 0) throw BadValue{"must be non-negative"};
      c.seed = static_cast<std::uint64_t>(s);
    };
    k["integrator.dt"] = [](RunConfig& c, const std::string& v) { c.dt = Positive(v); };
    k["integrator.horizon"] = [](RunConfig& c, const std::string& v) { c.horizon = NonNegative(v); };
    k["integrator.x0"] = [](RunConfig& c, const std::string& v) { c.x0 = ParseList(v); };
    k["integrator.history"] = [](RunConfig& c, const std::string& v) {
      const std::string h = Trim(v);
      if (h != "zero" && h != "table") throw BadValue{"history must be zero or table"};
      c.history = h;
    };
    k["integrator.history_s"] = [](RunConfig& c, const std::string& v) { c.history_s = ParseList(v); };
    k["integrator.history_eta"] = [](RunConfig& c, const std::string& v) { c.history_eta = Matrix(v); };
    k["integrator.store_eta_stride"] = [](RunConfig& c, const std::string& v) { c.eta_stride = static_cast<int>(Integer(v)); };
    k["integrator.eta_stride"] = [](RunConfig& c, const std::string& v) { c.eta_stride = static_cast<int>(Integer(v)); };
    k["equilibria.box"] = [](RunConfig& c, const std::string& v) { c.box = Positive(v); };
    k["equilibria.grid"] = [](RunConfig& c, const std::string& v) { c.eq_grid = PositiveInt(v); };
    k["block.kappa"] = [](RunConfig& c, const std::string& v) { c.block.kappa = Positive(v); };
    k["block.delta"] = [](RunConfig& c, const std::string& v) { c.block.delta = NonNegative(v); };
    k["block.delta_fraction"] = [](RunConfig& c, const std::string& v) { c.block.delta_fraction = Positive(v); };
    k["block.samples"] = [](RunConfig& c, const std::string& v) { c.block.n_boundary_samples = PositiveInt(v); };
    k["block.max_halvings"] = [](RunConfig& c, const std::string& v) { c.block.max_halvings = static_cast<int>(Integer(v)); };
    k["manifold.L"] = [](RunConfig& c, const std::string& v) { c.manifold_L = Positive(v); };
    k["manifold.T"] = [](RunConfig& c, const std::string& v) { c.manifold_T = Positive(v); };
    k["manifold.grid"] = [](RunConfig& c, const std::string& v) { c.manifold_grid = PositiveInt(v); };
    k["manifold.tol"] = [](RunConfig& c, const std::string& v) { c.manifold_tol = Positive(v); };
    k["manifold.max_iters"] = [](RunConfig& c, const std::string& v) { c.manifold_max_iters = PositiveInt(v); };
    k["graph.fan"] = [](RunConfig& c, const std::string& v) { c.shooting.fan = PositiveInt(v); };
    k["graph.refine"] = [](RunConfig& c, const std::string& v) { c.shooting.refine = PositiveInt(v); };
    k["graph.horizon"] = [](RunConfig& c, const std::string& v) { c.shooting.horizon = Positive(v); };
    k["graph.seed_fraction"] = [](RunConfig& c, const std::string& v) { c.shooting.seed_fraction = Positive(v); };
    k["graph.bracket_tol"] = [](RunConfig& c, const std::string& v) { c.shooting.bracket_tol = Positive(v); };
    k["graph.matching_radius"] = [](RunConfig& c, const std::string& v) { c.matching_radius = NonNegative(v); };
    k["lyapunov.trajectories"] = [](RunConfig& c, const std::string& v) { c.trajectories = PositiveInt(v); };
    k["output.dir"] = [](RunConfig& c, const std::string& v) {
      if (Trim(v).empty()) throw BadValue{"empty path"};
      c.out = Trim(v);
    };
    return k;
  }();
  return keys;
}

[[noreturn]] void Fail(const std::string& where, const std::string& field, const std::string& msg) {
  std::string text = where;
  if (!field.empty()) text += (text.empty() ? "" : ": ") + field;
  throw Error(ErrorCode::kConfigError, text + ": " + msg);
}

void Validate(const RunConfig& cfg, const std::string& where) {
  if (cfg.potential == "linear") {
    if (cfg.matrix.size() == 0) Fail(where, "potential.matrix", "required for the linear family");
    if (cfg.matrix.rows() != cfg.matrix.cols()) Fail(where, "potential.matrix", "must be square");
    if (cfg.matrix.rows() != cfg.dim) Fail(where, "potential.matrix", "size does not match potential.dim");
  }
  if (!cfg.x0.empty() && static_cast<int>(cfg.x0.size()) != cfg.dim) {
    Fail(where, "integrator.x0",
         "has " + std::to_string(cfg.x0.size()) + " entries, dim is " + std::to_string(cfg.dim));
  }
  if (cfg.A.family == "zero") Fail(where, "kernel.A.family", "the weighting kernel cannot be zero");
  for (const auto& [name, k] : {std::pair{"kernel.A", &cfg.A}, std::pair{"kernel.M", &cfg.M}}) {
    if (k->family != "table") continue;
    if (k->s.size() < 2 || k->s.size() != k->values.size()) {
      Fail(where, std::string(name) + ".values", "table needs matching s and values lists (at least 2)");
    }
    for (std::size_t i = 1; i < k->s.size(); ++i) {
      if (!(k->s[i] > k->s[i - 1])) Fail(where, std::string(name) + ".s", "must be strictly increasing");
    }
    if (k->s.front() != 0.0) Fail(where, std::string(name) + ".s", "must start at 0");
  }
  if (cfg.history == "table") {
    const auto& s = cfg.history_s;
    if (s.empty() || static_cast<long>(s.size()) != cfg.history_eta.rows()) {
      Fail(where, "integrator.history_eta", "needs one row per history_s node");
    }
    if (cfg.history_eta.cols() != cfg.dim) Fail(where, "integrator.history_eta", "row length must equal potential.dim");
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (!(s[i] > s[i - 1])) Fail(where, "integrator.history_s", "must be strictly increasing");
    }
    if (s.front() != 0.0 || cfg.history_eta.row(0).norm() != 0.0) {
      Fail(where, "integrator.history_eta", "eta(0) must be zero");
    }
  }
}

}  // namespace

std::vector<double> parse_list(const std::string& text) {
  try {
    return ParseList(text);
  } catch (const BadValue& b) {
    throw Error(ErrorCode::kConfigError, b.what);
  }
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& keys = Keys();
  auto it = keys.find(key);
  if (it == keys.end()) throw Error(ErrorCode::kConfigError, key + ": unknown key");
  try {
    it->second(cfg, value);
  } catch (const BadValue& b) {
    throw Error(ErrorCode::kConfigError, key + ": " + b.what);
  }
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::string line;
  int n = 0;
  std::map<std::string, int> seen;
  const auto& keys = Keys();
  while (std::getline(in, line)) {
    ++n;
    const std::string where = source + ":" + std::to_string(n);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) Fail(where, "", "expected 'key = value'");
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    if (key.empty()) Fail(where, "", "missing key");
    auto it = keys.find(key);
    if (it == keys.end()) Fail(where, key, "unknown key");
    if (seen.count(key)) Fail(where, key, "duplicate (first set on line " + std::to_string(seen[key]) + ")");
    seen[key] = n;
    try {
      it->second(cfg, value);
    } catch (const BadValue& b) {
      Fail(where, key, b.what);
    }
  }
  Validate(cfg, source);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kConfigError, path + ": cannot open");
  return parse_config(f, path);
}

void validate_config(const RunConfig& cfg) { Validate(cfg, ""); }

Potential make_potential(const RunConfig& cfg) {
  if (cfg.potential == "linear") return linear_field(cfg.matrix);
  return quartic_potential(cfg.dim, cfg.a, cfg.b, cfg.c);
}

KernelPair make_kernels(const RunConfig& cfg) {
  auto make = [&](const KernelConfig& k, double fallback_smax) {
    if (k.family == "zero") return zero_kernel(cfg.dim, k.s_max > 0 ? k.s_max : fallback_smax);
    if (k.family == "table") {
      std::vector<MatrixXd> vals;
      for (double v : k.values) vals.push_back(v * MatrixXd::Identity(cfg.dim, cfg.dim));
      return table_kernel(k.s, vals);
    }
    return exp_scalar_kernel(cfg.dim, k.kappa, k.scale, k.s_max);
  };
  KernelPair K;
  K.A = make(cfg.A, 0.0);
  K.M = make(cfg.M, K.A.s_max);
  return K;
}

HistoryState make_initial_state(const RunConfig& cfg, const MemoryModel& model) {
  VectorXd x0 = VectorXd::Constant(cfg.dim, 0.1);
  if (!cfg.x0.empty()) x0 = Eigen::Map<const VectorXd>(cfg.x0.data(), cfg.x0.size());
  HistoryState st = model.rest_state(x0);
  if (cfg.history != "table") return st;
  const auto& s = cfg.history_s;
  const MatrixXd& E = cfg.history_eta;
  const HistoryFunction z = model.zero_history();
  st.eta = HistoryFunction::Sample(cfg.dim, z.size(), model.dt(), [&](double t) -> VectorXd {
    if (t > s.back()) return VectorXd::Zero(cfg.dim);
    if (t == s.back()) return E.row(s.size() - 1).transpose();
    const auto it = std::upper_bound(s.begin(), s.end(), t);
    const std::size_t j = it - s.begin();
    const double w = (t - s[j - 1]) / (s[j] - s[j - 1]);
    return (1.0 - w) * E.row(j - 1).transpose() + w * E.row(j).transpose();
  });
  return st;
}

GraphOptions make_graph_options(const RunConfig& cfg) {
  GraphOptions g;
  g.shooting = cfg.shooting;
  g.shooting.dt = cfg.dt;
  g.block = cfg.block;
  g.block.seed = cfg.seed;
  g.equilibria.grid_density = cfg.eq_grid;
  if (cfg.box > 0) g.box = SearchBox::Cube(cfg.dim, cfg.box);
  g.manifold_T = cfg.manifold_T;
  g.matching_radius = cfg.matching_radius;
  return g;
}

}  // namespace morseflow
