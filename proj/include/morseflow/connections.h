#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "morseflow/manifolds.h"

namespace morseflow {

struct DiskSample {
  VectorXd base;
  VectorXd x;
  HistoryFunction eta;
  MatrixXd tangent;  // d x dim(base), columns span the tangent
};

struct EmbeddedDisk {
  std::vector<DiskSample> samples;
  double lip_estimate = 0.0;
  int base_dim() const { return samples.empty() ? 0 : static_cast<int>(samples[0].base.size()); }
  /// Largest weighted memory norm over the samples.
  double max_eta_norm(const MemoryModel& model) const;
};

/// Graph of a disk over the leading `m` coordinates of `frame`, centred at z0.
struct TangentGraph {
  BoxGrid grid;
  std::vector<VectorXd> values;  // fiber coordinates per node
  double lip_estimate = 0.0;
  double delta1 = 0.0;  // base radius
  double delta2 = 0.0;  // largest fiber value
  MatrixXd frame;
  VectorXd z0;
};

/// Moving least squares over the samples; halves the base box until the
/// graph's Lipschitz estimate is at most L_target.
TangentGraph reparametrize_over_tangent(const EmbeddedDisk& disk, const MatrixXd& frame,
                                        const VectorXd& z0, double L_target, double r0 = 0.0,
                                        double r_min = 1e-6, int nodes_per_axis = 9);

/// Flows every sample (and its tangent frame) for time t.
EmbeddedDisk transport_disk(const EmbeddedDisk& disk, const MemoryModel& model, double t);

struct IntersectionFrame {
  MatrixXd M;
  VectorXd z;
  int k1 = 0, c = 0, k2 = 0;
  double margin = 0.0;  // smallest principal angle between the two complements
  double cond = 1.0;
};

/// Tangent spaces from the samples nearest z (a single sample may carry the
/// full tangent).
IntersectionFrame build_intersection_frame(const EmbeddedDisk& wu, const EmbeddedDisk& ws,
                                           const VectorXd& z);
IntersectionFrame build_intersection_frame(const MatrixXd& Tu, const MatrixXd& Ts,
                                           const VectorXd& z);

struct IntersectionResult {
  VectorXd point;
  double eps = 0.0;
  double contraction_factor = 0.0;
  double transversality_margin = 0.0;
  int iterations = 0;
  double eta_norm = 0.0;  // memory at the intersection point
  double eta_radius = 0.0;  // R of the target block
  double time = 0.0;        // flight time from the source disk
  std::string method;
  IntersectionFrame frame;
  // Seed on the local unstable disk of the source (block coordinates).
  VectorXd seed_base;
};

struct ShootingOptions {
  int fan = 64;             // seeds per angular dimension on the disk boundary
  int refine = 4;
  double seed_fraction = 0.5;  // radius of the seed sphere in units of delta
  double horizon = 60.0;
  double dt = 0.01;
  double bracket_tol = 1e-11;
};

struct GraphOptions {
  ShootingOptions shooting;
  BlockOptions block;
  EquilibriumOptions equilibria;
  SearchBox box;
  double manifold_T = 1.0;
  double matching_radius = 0.0;  // <= 0: half the smallest node distance
  bool shoot_eps = true;         // also shoot at eps > 0 (not only the composed map)
};

struct Edge {
  int from = -1;
  int to = -1;
  IntersectionResult result;
};

struct ConnectionGraph {
  double eps = 0.0;
  std::vector<Equilibrium> nodes;
  std::vector<IsolatingBlock> blocks;
  std::vector<double> lyapunov;  // L_eps at the nodes
  std::vector<Edge> edges;
  std::vector<std::pair<std::pair<int, int>, std::string>> absent;  // tested pairs without an edge
  bool has_edge(int i, int j) const;
  int find_edge(int i, int j) const;
};

/// Owns the equilibria, blocks and shooting caches for one (P, K, eps).
class ConnectionFinder {
 public:
  ConnectionFinder(const Potential& P, const KernelPair& K, double eps, const GraphOptions& opt);

  const std::vector<Equilibrium>& equilibria() const { return eqs_; }
  const std::vector<IsolatingBlock>& blocks() const { return blocks_; }
  double eps() const { return eps_; }
  std::shared_ptr<const MemoryModel> model() const { return model_; }
  double lyapunov(int i) const;

  /// eps = 0: shooting. eps > 0: shooting (if enabled) and the composed-map
  /// fixed point seeded from the eps = 0 result.
  IntersectionResult find_connection(int i, int j, const IntersectionResult* eps0 = nullptr);

  /// Index of the node nearest x within its block, or -1.
  int locate(const VectorXd& x) const;

 private:
  struct Visit {
    double t_enter = -1.0;
    long step_enter = -1;
    VectorXd x_enter;
    VectorXd x_inner;  // first state well inside the block
    double t_inner = -1.0;
    double stay = 0.0;
    int exit_sign = 0;
  };
  struct Shot {
    double param = 0.0;
    VectorXd base;
    int terminal = -1;  // sink block reached
    std::map<int, Visit> visits;
  };
  struct Fan {
    std::vector<Shot> shots;
    std::map<int, Shot> saddle_hits;  // target -> separatrix trajectory
    bool done = false;
  };

  LocalPoint seed_point(int i, const VectorXd& base);
  Shot shoot(int i, double param);
  VectorXd fan_base(int i, double param) const;
  Fan& fan(int i);
  IntersectionResult from_shot(int i, int j, const Shot& s, const Visit& v) const;
  IntersectionResult composed(int i, int j, const IntersectionResult& eps0);
  const DiskFunction* unstable_disk(int i);
  const DiskFunction* stable_disk(int j);
  std::shared_ptr<TimeTMap> block_map(int i);

  Potential P_;
  KernelPair K_;
  double eps_;
  GraphOptions opt_;
  KernelConstants kc_;
  std::shared_ptr<const MemoryModel> model_;
  std::vector<Equilibrium> eqs_;
  std::vector<IsolatingBlock> blocks_;
  std::map<int, Fan> fans_;
  std::map<int, DiskFunction> udisks_, sdisks_;
  std::map<int, std::shared_ptr<TimeTMap>> maps_;
};

/// One find_connection per ordered pair with L(i) > L(j) and u_i + s_j >= d.
ConnectionGraph connection_graph(const Potential& P, const KernelPair& K, double eps,
                                 const GraphOptions& opt = {},
                                 const ConnectionGraph* reference = nullptr);

/// Adjacency with every implied chain added.
std::vector<std::pair<int, int>> transitive_closure(const ConnectionGraph& g);

struct GraphComparison {
  std::vector<int> node_map;  // g0 node -> g1 node
  bool isomorphic = false;
  bool closures_equal = false;
  std::vector<std::pair<int, int>> missing;  // edges of g0 (g0 indices) absent in g1
  std::vector<std::pair<int, int>> extra;    // edges of g1 (g0 indices) absent in g0
  std::vector<std::string> notes;
};

GraphComparison compare_graphs(const ConnectionGraph& g0, const ConnectionGraph& g1,
                               double matching_radius = 0.0);

}  // namespace morseflow
