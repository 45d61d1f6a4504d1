#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "vpc/common.hpp"
#include "vpc/gaussian.hpp"
#include "vpc/geometry.hpp"

namespace vpc {

using NodeId = std::uint32_t;
using VariableId = std::uint32_t;

// Largest admissible KL x KR joint tensor on a single HFV node.
constexpr std::size_t kMaxJointCells = 4096;

struct GaussianLeaf {
  VariableId var = 0;
  double mean = 0.0;
  double log_stddev = 0.0;
  double stddev() const { return std::exp(log_stddev); }
};

struct ProductNode {
  std::vector<NodeId> children;
};

struct SumNode {
  std::vector<NodeId> children;
  std::vector<double> log_weights;
};

// Voronoi-gated sum: centroids live in the node's scope space; the hard gate
// routes to the expert of the cell containing x, ties to the lowest index.
struct VTSumNode {
  std::vector<VariableId> scope;                 // dimension order of centroid columns
  std::vector<std::vector<double>> centroids;    // K x |scope|
  std::vector<double> log_mixture;               // K
  std::vector<NodeId> experts;                   // K
  int num_cells() const { return static_cast<int>(centroids.size()); }
};

// One factor block of an HFV-gated sum. Cells are Cartesian products of the
// univariate Voronoi intervals of the block's variables (centroid lists live
// in Circuit::var_centroids, shared across nesting levels). experts[k] is the
// subcircuit for composite cell k; entries may repeat a shared child.
struct HFVBlock {
  std::vector<VariableId> vars;
  std::vector<NodeId> experts;
};

struct HFVSumNode {
  std::array<HFVBlock, 2> blocks;
  std::vector<double> log_joint;  // KL x KR row-major
};

using Node = std::variant<GaussianLeaf, ProductNode, SumNode, VTSumNode, HFVSumNode>;

namespace detail {
inline void append_children(const Node& n, std::vector<NodeId>& out) {
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, ProductNode> || std::is_same_v<T, SumNode>) {
          out.insert(out.end(), node.children.begin(), node.children.end());
        } else if constexpr (std::is_same_v<T, VTSumNode>) {
          out.insert(out.end(), node.experts.begin(), node.experts.end());
        } else if constexpr (std::is_same_v<T, HFVSumNode>) {
          for (const auto& b : node.blocks)
            out.insert(out.end(), b.experts.begin(), b.experts.end());
        }
      },
      n);
}
}  // namespace detail

// Flat-arena circuit. finalize() caches a topological order and per-node
// scopes; after that the structure is immutable (training only mutates
// parameter values in place).
struct Circuit {
  std::vector<Node> nodes;
  NodeId root = 0;
  std::uint32_t num_vars = 0;

  // Shared univariate tessellations for HFV gating, one sorted centroid list
  // per variable (empty when the circuit has no HFV nodes).
  std::vector<std::vector<double>> var_centroids;

  // caches, filled by finalize()
  std::vector<NodeId> topo;                       // children before parents
  std::vector<std::vector<VariableId>> scopes;    // sorted variable lists

  NodeId add(Node n) {
    nodes.push_back(std::move(n));
    return static_cast<NodeId>(nodes.size() - 1);
  }

  std::size_t hfv_block_cell_count(const HFVBlock& b) const {
    std::size_t k = 1;
    for (VariableId v : b.vars) k *= var_centroids.at(v).size();
    return k;
  }

  // Composite cell index -> per-variable univariate cell indices
  // (vars[0] is the most significant digit).
  void hfv_decompose(const HFVBlock& b, std::size_t cell, std::vector<int>& out) const {
    out.resize(b.vars.size());
    for (std::size_t i = b.vars.size(); i-- > 0;) {
      std::size_t kv = var_centroids[b.vars[i]].size();
      out[i] = static_cast<int>(cell % kv);
      cell /= kv;
    }
  }

  void finalize();
};

struct StructureViolation {
  NodeId node;
  std::string what;
};

struct StructureReport {
  bool smooth = true;
  bool decomposable = true;
  std::vector<StructureViolation> violations;
  std::vector<std::vector<VariableId>> scopes;
};

inline void Circuit::finalize() {
  const std::size_t n = nodes.size();
  if (n == 0) throw StructureError("circuit has no nodes");
  if (root >= n) throw StructureError("root id out of range");

  // Iterative DFS from the root: topological order + cycle detection.
  topo.clear();
  topo.reserve(n);
  std::vector<std::uint8_t> color(n, 0);  // 0 white, 1 gray, 2 black
  std::vector<std::pair<NodeId, std::size_t>> stack;
  std::vector<NodeId> kids;
  stack.emplace_back(root, 0);
  color[root] = 1;
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    kids.clear();
    detail::append_children(nodes[id], kids);
    if (next < kids.size()) {
      NodeId c = kids[next++];
      if (c >= n) throw StructureError("dangling child id " + std::to_string(c));
      if (color[c] == 1) throw StructureError("cycle through node " + std::to_string(c));
      if (color[c] == 0) {
        color[c] = 1;
        stack.emplace_back(c, 0);
      }
    } else {
      color[id] = 2;
      topo.push_back(id);
      stack.pop_back();
    }
  }

  // Scopes bottom-up.
  scopes.assign(n, {});
  for (NodeId id : topo) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, GaussianLeaf>) {
            if (node.var >= num_vars) throw StructureError("leaf variable out of range");
            scopes[id] = {node.var};
          } else {
            kids.clear();
            detail::append_children(nodes[id], kids);
            if (kids.empty()) throw StructureError("internal node " + std::to_string(id) +
                                                   " has no children");
            std::vector<VariableId> s;
            for (NodeId c : kids) s.insert(s.end(), scopes[c].begin(), scopes[c].end());
            std::sort(s.begin(), s.end());
            s.erase(std::unique(s.begin(), s.end()), s.end());
            scopes[id] = std::move(s);
          }
          if constexpr (std::is_same_v<T, SumNode>) {
            if (node.log_weights.size() != node.children.size())
              throw StructureError("sum node weight/child count mismatch");
          } else if constexpr (std::is_same_v<T, VTSumNode>) {
            if (node.experts.size() != node.centroids.size() ||
                node.log_mixture.size() != node.centroids.size())
              throw StructureError("vt node expert/centroid/weight count mismatch");
            for (const auto& c : node.centroids)
              if (c.size() != node.scope.size())
                throw StructureError("vt centroid dimension mismatch");
          } else if constexpr (std::is_same_v<T, HFVSumNode>) {
            std::size_t kl = hfv_block_cell_count(node.blocks[0]);
            std::size_t kr = hfv_block_cell_count(node.blocks[1]);
            if (node.blocks[0].experts.size() != kl || node.blocks[1].experts.size() != kr)
              throw StructureError("hfv block expert count mismatch");
            if (node.log_joint.size() != kl * kr)
              throw StructureError("hfv joint weight tensor size mismatch");
            if (kl * kr > kMaxJointCells)
              throw StructureError("hfv joint cell count " + std::to_string(kl * kr) +
                                   " exceeds cap " + std::to_string(kMaxJointCells));
          }
        },
        nodes[id]);
  }
  if (scopes[root].size() != num_vars)
    throw StructureError("root scope does not cover all variables");
}

// Smoothness / decomposability report per the structural definitions. Scopes
// are recomputed here so the report stands alone.
inline StructureReport validate_structure(const Circuit& c) {
  StructureReport rep;
  rep.scopes = c.scopes;
  auto same_scope = [&](const std::vector<VariableId>& a, const std::vector<VariableId>& b) {
    return a == b;
  };
  for (NodeId id : c.topo) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, ProductNode>) {
            std::vector<VariableId> seen;
            for (NodeId ch : node.children) {
              for (VariableId v : c.scopes[ch]) {
                if (std::binary_search(seen.begin(), seen.end(), v)) {
                  rep.decomposable = false;
                  rep.violations.push_back({id, "product children overlap on variable " +
                                                    std::to_string(v)});
                }
              }
              seen.insert(seen.end(), c.scopes[ch].begin(), c.scopes[ch].end());
              std::sort(seen.begin(), seen.end());
            }
          } else if constexpr (std::is_same_v<T, SumNode>) {
            for (NodeId ch : node.children) {
              if (!same_scope(c.scopes[ch], c.scopes[id])) {
                rep.smooth = false;
                rep.violations.push_back({id, "sum child " + std::to_string(ch) +
                                                  " scope differs"});
              }
            }
          } else if constexpr (std::is_same_v<T, VTSumNode>) {
            for (NodeId ch : node.experts) {
              if (!same_scope(c.scopes[ch], c.scopes[id])) {
                rep.smooth = false;
                rep.violations.push_back({id, "vt expert " + std::to_string(ch) +
                                                  " scope differs"});
              }
            }
          } else if constexpr (std::is_same_v<T, HFVSumNode>) {
            std::vector<VariableId> all;
            for (const auto& b : node.blocks) {
              std::vector<VariableId> bs(b.vars.begin(), b.vars.end());
              std::sort(bs.begin(), bs.end());
              for (VariableId v : bs) {
                if (std::binary_search(all.begin(), all.end(), v)) {
                  rep.decomposable = false;
                  rep.violations.push_back({id, "hfv blocks overlap on variable " +
                                                    std::to_string(v)});
                }
              }
              all.insert(all.end(), bs.begin(), bs.end());
              std::sort(all.begin(), all.end());
              for (NodeId e : b.experts) {
                if (c.scopes[e] != bs) {
                  rep.smooth = false;
                  rep.violations.push_back({id, "hfv expert " + std::to_string(e) +
                                                    " scope differs from its block"});
                }
              }
            }
          }
        },
        c.nodes[id]);
  }
  return rep;
}

// --- gating ------------------------------------------------------------

// log of Eq-style softmax-over-squared-distances weights; shifting by the
// minimum distance keeps every exponent <= 0.
inline std::vector<double> soft_log_weights(const std::vector<std::vector<double>>& centroids,
                                            std::span<const double> u, double alpha) {
  if (!(alpha > 0.0)) throw ArgumentError("soft gate: alpha must be positive");
  std::vector<double> lw(centroids.size());
  double dmin = kInf;
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    lw[k] = squared_distance(u, centroids[k]);
    dmin = std::min(dmin, lw[k]);
  }
  double z = kNegInf;
  for (auto& v : lw) {
    v = -alpha * (v - dmin);
    z = log_add_exp(z, v);
  }
  for (auto& v : lw) v -= z;
  return lw;
}

inline std::vector<double> soft_weights(const std::vector<std::vector<double>>& centroids,
                                        std::span<const double> u, double alpha) {
  auto lw = soft_log_weights(centroids, u, alpha);
  for (auto& v : lw) v = std::exp(v);
  return lw;
}

inline std::vector<double> soft_log_weights_1d(const std::vector<double>& centroids, double x,
                                               double alpha) {
  if (!(alpha > 0.0)) throw ArgumentError("soft gate: alpha must be positive");
  std::vector<double> lw(centroids.size());
  double dmin = kInf;
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    double d = x - centroids[k];
    lw[k] = d * d;
    dmin = std::min(dmin, lw[k]);
  }
  double z = kNegInf;
  for (auto& v : lw) {
    v = -alpha * (v - dmin);
    z = log_add_exp(z, v);
  }
  for (auto& v : lw) v -= z;
  return lw;
}

// --- evaluation --------------------------------------------------------

struct EvalMode {
  bool hard = true;
  double alpha = 0.0;
  static EvalMode Hard() { return {true, 0.0}; }
  static EvalMode Soft(double alpha) {
    if (!(alpha > 0.0)) throw ArgumentError("Soft mode requires alpha > 0");
    return {false, alpha};
  }
};

namespace detail {

inline std::vector<double> normalized_log_weights(const std::vector<double>& lw) {
  std::vector<double> out = lw;
  double z = log_sum_exp(out);
  for (auto& v : out) v -= z;
  return out;
}

// Forward pass in the log domain over the cached topological order.
// Mixture weights are log-softmax-normalized on the fly, so stored weight
// vectors act as unconstrained logits.
inline void forward_log(const Circuit& c, std::span<const double> x, EvalMode mode,
                        std::vector<double>& logv) {
  logv.assign(c.nodes.size(), 0.0);
  std::vector<double> terms;
  std::vector<int> per_var;
  for (NodeId id : c.topo) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, GaussianLeaf>) {
            logv[id] = gaussian_log_pdf(x[node.var], node.mean, node.stddev());
          } else if constexpr (std::is_same_v<T, ProductNode>) {
            double s = 0.0;
            for (NodeId ch : node.children) s += logv[ch];
            logv[id] = s;
          } else if constexpr (std::is_same_v<T, SumNode>) {
            auto lw = normalized_log_weights(node.log_weights);
            terms.resize(node.children.size());
            for (std::size_t i = 0; i < node.children.size(); ++i)
              terms[i] = lw[i] + logv[node.children[i]];
            logv[id] = log_sum_exp(terms);
          } else if constexpr (std::is_same_v<T, VTSumNode>) {
            std::vector<double> u(node.scope.size());
            for (std::size_t i = 0; i < node.scope.size(); ++i) u[i] = x[node.scope[i]];
            auto lpi = normalized_log_weights(node.log_mixture);
            if (mode.hard) {
              Tessellation tess(node.centroids);
              int k = nearest_centroid(tess, u).nearest_cell;
              logv[id] = lpi[static_cast<std::size_t>(k)] +
                         logv[node.experts[static_cast<std::size_t>(k)]];
            } else {
              auto lg = soft_log_weights(node.centroids, u, mode.alpha);
              terms.resize(node.experts.size());
              for (std::size_t k = 0; k < node.experts.size(); ++k)
                terms[k] = lg[k] + lpi[k] + logv[node.experts[k]];
              logv[id] = log_sum_exp(terms);
            }
          } else if constexpr (std::is_same_v<T, HFVSumNode>) {
            auto lpi = normalized_log_weights(node.log_joint);
            const auto& bl = node.blocks[0];
            const auto& br = node.blocks[1];
            std::size_t kl = c.hfv_block_cell_count(bl);
            std::size_t kr = c.hfv_block_cell_count(br);
            if (mode.hard) {
              auto cell_of = [&](const HFVBlock& b) {
                std::size_t cell = 0;
                for (VariableId v : b.vars) {
                  const auto& cs = c.var_centroids[v];
                  cell = cell * cs.size() +
                         static_cast<std::size_t>(univariate_cell_of(cs, x[v]));
                }
                return cell;
              };
              std::size_t il = cell_of(bl), ir = cell_of(br);
              logv[id] = lpi[il * kr + ir] + logv[bl.experts[il]] + logv[br.experts[ir]];
            } else {
              // per-variable univariate soft gates; a block gate is their sum
              auto block_gates = [&](const HFVBlock& b, std::size_t cells) {
                std::vector<std::vector<double>> per(b.vars.size());
                for (std::size_t i = 0; i < b.vars.size(); ++i)
                  per[i] = soft_log_weights_1d(c.var_centroids[b.vars[i]], x[b.vars[i]],
                                               mode.alpha);
                std::vector<double> g(cells, 0.0);
                for (std::size_t k = 0; k < cells; ++k) {
                  c.hfv_decompose(b, k, per_var);
                  for (std::size_t i = 0; i < b.vars.size(); ++i)
                    g[k] += per[i][static_cast<std::size_t>(per_var[i])];
                }
                return g;
              };
              auto gl = block_gates(bl, kl);
              auto gr = block_gates(br, kr);
              terms.resize(kl * kr);
              for (std::size_t a = 0; a < kl; ++a)
                for (std::size_t b2 = 0; b2 < kr; ++b2)
                  terms[a * kr + b2] = lpi[a * kr + b2] + gl[a] + gr[b2] +
                                       logv[bl.experts[a]] + logv[br.experts[b2]];
              logv[id] = log_sum_exp(terms);
            }
          }
        },
        c.nodes[id]);
    if (std::isnan(logv[id]))
      throw NumericError("non-finite log value at node " + std::to_string(id));
  }
}

}  // namespace detail

inline double eval_log_density(const Circuit& c, std::span<const double> x, EvalMode mode) {
  if (x.size() != c.num_vars) throw ArgumentError("eval_log_density: input dimension mismatch");
  for (double v : x)
    if (!std::isfinite(v)) throw ArgumentError("eval_log_density: non-finite input");
  std::vector<double> logv;
  detail::forward_log(c, x, mode, logv);
  return logv[c.root];
}

// Closed-form interval mass of a Gaussian leaf (extended-real endpoints).
inline double leaf_interval_mass(const GaussianLeaf& leaf, double a, double b) {
  return gaussian_interval_mass(a, b, leaf.mean, leaf.stddev());
}

// Hard-mode determinism probe: true iff no standard sum node on the active
// evaluation path mixes more than one positive-density child. VT/HFV gates
// always fire exactly one cell; exact boundary ties are reported.
inline bool is_deterministic_at(const Circuit& c, std::span<const double> x,
                                std::vector<NodeId>* boundary_hits = nullptr) {
  bool deterministic = true;
  std::vector<std::uint8_t> active(c.nodes.size(), 0);
  active[c.root] = 1;
  for (std::size_t i = c.topo.size(); i-- > 0;) {
    NodeId id = c.topo[i];
    if (!active[id]) continue;
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, ProductNode>) {
            for (NodeId ch : node.children) active[ch] = 1;
          } else if constexpr (std::is_same_v<T, SumNode>) {
            // Gaussian-leaf circuits have strictly positive children
            if (node.children.size() > 1) deterministic = false;
            for (NodeId ch : node.children) active[ch] = 1;
          } else if constexpr (std::is_same_v<T, VTSumNode>) {
            std::vector<double> u(node.scope.size());
            for (std::size_t j = 0; j < node.scope.size(); ++j) u[j] = x[node.scope[j]];
            Tessellation tess(node.centroids);
            Margin m = nearest_centroid(tess, u);
            if (m.gamma == 0.0 && boundary_hits) boundary_hits->push_back(id);
            active[node.experts[static_cast<std::size_t>(m.nearest_cell)]] = 1;
          } else if constexpr (std::is_same_v<T, HFVSumNode>) {
            for (const auto& b : node.blocks) {
              std::size_t cell = 0;
              for (VariableId v : b.vars) {
                const auto& cs = c.var_centroids[v];
                int idx = univariate_cell_of(cs, x[v]);
                if (boundary_hits && cs.size() > 1) {
                  // exact midpoint tie
                  double d0 = std::abs(x[v] - cs[static_cast<std::size_t>(idx)]);
                  for (std::size_t j = 0; j < cs.size(); ++j)
                    if (j != static_cast<std::size_t>(idx) && std::abs(x[v] - cs[j]) == d0) {
                      boundary_hits->push_back(id);
                      break;
                    }
                }
                cell = cell * cs.size() + static_cast<std::size_t>(idx);
              }
              active[b.experts[cell]] = 1;
            }
          }
        },
        c.nodes[id]);
  }
  return deterministic;
}

}  // namespace vpc
