#pragma once

#include <functional>
#include <vector>

#include "vpc/circuit.hpp"
#include "vpc/rng.hpp"

namespace vpc {

// Binary vtree over the variables; leaves carry one variable each.
struct Vtree {
  struct VNode {
    int left = -1, right = -1;  // leaf iff left < 0
    VariableId var = 0;
  };
  std::vector<VNode> nodes;
  int root = -1;

  bool is_leaf(int id) const { return nodes[static_cast<std::size_t>(id)].left < 0; }

  void collect_vars(int id, std::vector<VariableId>& out) const {
    const auto& n = nodes[static_cast<std::size_t>(id)];
    if (n.left < 0) {
      out.push_back(n.var);
    } else {
      collect_vars(n.left, out);
      collect_vars(n.right, out);
    }
  }
};

namespace detail {
inline int build_balanced(Vtree& vt, std::vector<VariableId>& vars, std::size_t lo,
                          std::size_t hi) {
  if (hi - lo == 1) {
    vt.nodes.push_back({-1, -1, vars[lo]});
    return static_cast<int>(vt.nodes.size() - 1);
  }
  std::size_t mid = lo + (hi - lo) / 2;
  int l = build_balanced(vt, vars, lo, mid);
  int r = build_balanced(vt, vars, mid, hi);
  vt.nodes.push_back({l, r, 0});
  return static_cast<int>(vt.nodes.size() - 1);
}
}  // namespace detail

// Balanced vtree over a seeded random permutation of the variables.
inline Vtree random_vtree(std::uint32_t num_vars, std::uint64_t seed) {
  if (num_vars == 0) throw ArgumentError("random_vtree: need at least one variable");
  std::vector<VariableId> vars(num_vars);
  for (std::uint32_t i = 0; i < num_vars; ++i) vars[i] = i;
  SplitMix64 rng(seed);
  rng.shuffle(vars);
  Vtree vt;
  vt.root = detail::build_balanced(vt, vars, 0, vars.size());
  return vt;
}

// ((v0, v1), v2), ... in variable order.
inline Vtree left_linear_vtree(std::uint32_t num_vars) {
  if (num_vars == 0) throw ArgumentError("left_linear_vtree: need at least one variable");
  Vtree vt;
  vt.nodes.push_back({-1, -1, 0});
  int acc = 0;
  for (std::uint32_t v = 1; v < num_vars; ++v) {
    vt.nodes.push_back({-1, -1, v});
    int leaf = static_cast<int>(vt.nodes.size() - 1);
    vt.nodes.push_back({acc, leaf, 0});
    acc = static_cast<int>(vt.nodes.size() - 1);
  }
  vt.root = acc;
  return vt;
}

// Leaf initializer: Gaussian parameters for the leaf of variable `var` in
// univariate cell `cell`.
using HfvLeafInit = std::function<GaussianLeaf(VariableId var, int cell)>;

namespace detail {

// Builds the subcircuit for a vtree node and returns the block describing it
// from the parent's perspective. Single-variable children become blocks of
// per-cell Gaussian leaves; internal children become blocks whose cells all
// share the one child HFV node (cross-cell structure lives in the child's own
// joint tensor).
inline HFVBlock build_hfv_block(Circuit& c, const Vtree& vt, int vid, const HfvLeafInit& init);

inline NodeId build_hfv_node(Circuit& c, const Vtree& vt, int vid, const HfvLeafInit& init) {
  const auto& n = vt.nodes[static_cast<std::size_t>(vid)];
  HFVSumNode node;
  node.blocks[0] = build_hfv_block(c, vt, n.left, init);
  node.blocks[1] = build_hfv_block(c, vt, n.right, init);
  std::size_t kl = c.hfv_block_cell_count(node.blocks[0]);
  std::size_t kr = c.hfv_block_cell_count(node.blocks[1]);
  if (kl * kr > kMaxJointCells)
    throw StructureError("build_hfv: joint cell count " + std::to_string(kl * kr) +
                         " exceeds cap " + std::to_string(kMaxJointCells));
  node.log_joint.assign(kl * kr, -std::log(static_cast<double>(kl * kr)));
  return c.add(std::move(node));
}

inline HFVBlock build_hfv_block(Circuit& c, const Vtree& vt, int vid, const HfvLeafInit& init) {
  HFVBlock b;
  if (vt.is_leaf(vid)) {
    VariableId v = vt.nodes[static_cast<std::size_t>(vid)].var;
    b.vars = {v};
    const std::size_t kv = c.var_centroids.at(v).size();
    for (std::size_t cell = 0; cell < kv; ++cell)
      b.experts.push_back(c.add(init(v, static_cast<int>(cell))));
  } else {
    vt.collect_vars(vid, b.vars);
    NodeId child = build_hfv_node(c, vt, vid, init);
    b.experts.assign(c.hfv_block_cell_count(b), child);
  }
  return b;
}

}  // namespace detail

// Assembles a fully HFV-gated circuit aligned with `vtree`. `var_centroids`
// holds one sorted list per variable; joint tensors start uniform.
inline Circuit build_hfv(const Vtree& vtree, std::vector<std::vector<double>> var_centroids,
                         const HfvLeafInit& init) {
  Circuit c;
  c.var_centroids = std::move(var_centroids);
  c.num_vars = static_cast<std::uint32_t>(c.var_centroids.size());
  std::vector<VariableId> vars;
  vtree.collect_vars(vtree.root, vars);
  if (vars.size() != c.num_vars)
    throw ArgumentError("build_hfv: vtree variable count mismatch");
  for (const auto& cs : c.var_centroids) {
    if (cs.empty()) throw ArgumentError("build_hfv: empty centroid list");
    for (std::size_t i = 0; i + 1 < cs.size(); ++i)
      if (!(cs[i] < cs[i + 1]))
        throw ArgumentError("build_hfv: centroids must be strictly increasing");
  }
  if (c.num_vars == 1) {
    // degenerate tree: a plain sum over the per-cell leaves, gated trivially
    throw ArgumentError("build_hfv: need at least two variables");
  }
  c.root = detail::build_hfv_node(c, vtree, vtree.root, init);
  c.finalize();
  return c;
}

// Per-variable constraint for exact inference: either integrate over an
// interval or evaluate the density at a point.
struct VarConstraint {
  bool is_point = false;
  double x = 0.0;
  Interval iv;

  static VarConstraint Point(double v) { return {true, v, {}}; }
  static VarConstraint Range(Interval i) { return {false, 0.0, i}; }
  static VarConstraint Free() { return {false, 0.0, {kNegInf, kInf}}; }
};

namespace detail {

// Exact log "mass" of the subcircuit at `id` under per-variable constraints:
// interval variables are integrated in closed form, point variables
// contribute densities. Hard HFV gates are axis-aligned half-open intervals,
// so intersecting them with the constraints stays within this family. VT
// nodes are not tractable this way.
inline double hfv_log_mass(const Circuit& c, NodeId id, std::vector<VarConstraint>& cons) {
  return std::visit(
      [&](const auto& node) -> double {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, GaussianLeaf>) {
          const VarConstraint& vc = cons[node.var];
          if (vc.is_point) return gaussian_log_pdf(vc.x, node.mean, node.stddev());
          double m = gaussian_interval_mass(vc.iv.lo, vc.iv.hi, node.mean, node.stddev());
          return m > 0.0 ? std::log(m) : kNegInf;
        } else if constexpr (std::is_same_v<T, ProductNode>) {
          double s = 0.0;
          for (NodeId ch : node.children) s += hfv_log_mass(c, ch, cons);
          return s;
        } else if constexpr (std::is_same_v<T, SumNode>) {
          std::vector<double> lw = node.log_weights;
          log_normalize(lw);
          std::vector<double> terms(node.children.size());
          for (std::size_t i = 0; i < node.children.size(); ++i)
            terms[i] = lw[i] + hfv_log_mass(c, node.children[i], cons);
          return log_sum_exp(terms);
        } else if constexpr (std::is_same_v<T, VTSumNode>) {
          throw TractabilityError("exact inference requires HFV gating; node " +
                                  std::to_string(id) + " is a general Voronoi gate");
        } else if constexpr (std::is_same_v<T, HFVSumNode>) {
          // Per block, the mass of each composite cell under the tightened
          // constraints; cells incompatible with a point or empty after
          // intersection drop out.
          auto block_masses = [&](const HFVBlock& b) {
            std::size_t cells = c.hfv_block_cell_count(b);
            std::vector<double> lm(cells, kNegInf);
            std::vector<std::vector<Interval>> var_cells(b.vars.size());
            for (std::size_t i = 0; i < b.vars.size(); ++i)
              var_cells[i] = univariate_cells(c.var_centroids[b.vars[i]]);
            std::vector<int> idx;
            std::vector<VarConstraint> saved(b.vars.size());
            for (std::size_t i = 0; i < b.vars.size(); ++i) saved[i] = cons[b.vars[i]];
            for (std::size_t k = 0; k < cells; ++k) {
              c.hfv_decompose(b, k, idx);
              bool feasible = true;
              for (std::size_t i = 0; i < b.vars.size() && feasible; ++i) {
                const Interval& cell = var_cells[i][static_cast<std::size_t>(idx[i])];
                VarConstraint& vc = cons[b.vars[i]];
                if (saved[i].is_point) {
                  if (!cell.contains(saved[i].x)) feasible = false;
                } else {
                  Interval tight = intersect(saved[i].iv, cell);
                  if (!(tight.lo < tight.hi)) feasible = false;
                  vc = VarConstraint::Range(tight);
                }
              }
              if (feasible) lm[k] = hfv_log_mass(c, b.experts[k], cons);
              for (std::size_t i = 0; i < b.vars.size(); ++i) cons[b.vars[i]] = saved[i];
            }
            return lm;
          };
          auto ml = block_masses(node.blocks[0]);
          auto mr = block_masses(node.blocks[1]);
          std::vector<double> lpi = node.log_joint;
          log_normalize(lpi);
          std::vector<double> terms(ml.size() * mr.size());
          for (std::size_t a = 0; a < ml.size(); ++a)
            for (std::size_t b2 = 0; b2 < mr.size(); ++b2)
              terms[a * mr.size() + b2] = lpi[a * mr.size() + b2] + ml[a] + mr[b2];
          return log_sum_exp(terms);
        }
      },
      c.nodes[id]);
}

}  // namespace detail

inline double hfv_log_mass(const Circuit& c, std::vector<VarConstraint> cons) {
  if (cons.size() != c.num_vars) throw ArgumentError("hfv_log_mass: constraint count mismatch");
  return detail::hfv_log_mass(c, c.root, cons);
}

// log Z over all of R^d. Hard gating truncates each expert to its cell, so Z
// is generally below 1; it equals 1 only when every gate has a single cell.
inline double hfv_log_partition(const Circuit& c) {
  return hfv_log_mass(c, std::vector<VarConstraint>(c.num_vars, VarConstraint::Free()));
}

// log of the exact marginal density of the assignment {vars[i] = values[i]},
// all remaining variables integrated out.
inline double hfv_log_marginal(const Circuit& c, const std::vector<VariableId>& vars,
                               const std::vector<double>& values) {
  if (vars.size() != values.size()) throw ArgumentError("hfv_log_marginal: size mismatch");
  std::vector<VarConstraint> cons(c.num_vars, VarConstraint::Free());
  std::vector<bool> seen(c.num_vars, false);
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (vars[i] >= c.num_vars) throw ArgumentError("hfv_log_marginal: variable out of range");
    if (seen[vars[i]]) throw ArgumentError("hfv_log_marginal: duplicate variable");
    seen[vars[i]] = true;
    if (!std::isfinite(values[i]))
      throw ArgumentError("hfv_log_marginal: non-finite evidence value");
    cons[vars[i]] = VarConstraint::Point(values[i]);
  }
  return hfv_log_mass(c, std::move(cons));
}

// log p(query | evidence), both given as variable/value lists with disjoint
// variable sets.
inline double hfv_log_conditional(const Circuit& c, const std::vector<VariableId>& query_vars,
                                  const std::vector<double>& query_values,
                                  const std::vector<VariableId>& evidence_vars,
                                  const std::vector<double>& evidence_values) {
  std::vector<VariableId> joint_vars = query_vars;
  joint_vars.insert(joint_vars.end(), evidence_vars.begin(), evidence_vars.end());
  std::vector<double> joint_values = query_values;
  joint_values.insert(joint_values.end(), evidence_values.begin(), evidence_values.end());
  double num = hfv_log_marginal(c, joint_vars, joint_values);
  double den = evidence_vars.empty() ? 0.0 : hfv_log_marginal(c, evidence_vars, evidence_values);
  if (den == kNegInf) throw NumericError("hfv_log_conditional: evidence has zero density");
  return num - den;
}

// True iff every gate in the circuit is HFV (no general Voronoi nodes), the
// precondition for the exact routines above.
inline bool is_hfv_circuit(const Circuit& c) {
  for (NodeId id : c.topo)
    if (std::holds_alternative<VTSumNode>(c.nodes[id])) return false;
  return true;
}

}  // namespace vpc
