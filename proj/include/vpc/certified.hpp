#pragma once

#include <iomanip>
#include <ostream>
#include <queue>
#include <vector>

#include "vpc/circuit.hpp"
#include "vpc/hfv.hpp"

namespace vpc {

// Mass bounds in the linear domain. 0 <= lo <= hi always.
struct BoundInterval {
  double lo = 0.0;
  double hi = 0.0;
};

struct Evidence {
  std::vector<VariableId> vars;
  std::vector<double> values;
};

// [joint.lo / evidence.hi, joint.hi / evidence.lo]; division is monotone in
// the numerator and antitone in the denominator, so this brackets the true
// ratio whenever the inputs bracket their true values.
inline BoundInterval conditional_bounds(const BoundInterval& joint,
                                        const BoundInterval& evidence) {
  if (!(evidence.lo > 0.0))
    throw NumericError(
        "conditional_bounds: evidence lower bound is not positive; refine the evidence "
        "bounds further");
  return {joint.lo / evidence.hi, joint.hi / evidence.lo};
}

// Immutable per-query caches over one circuit: normalized linear mixture
// weights per node, half-space lists per Voronoi cell, univariate cell
// intervals per variable.
class CertContext {
 public:
  explicit CertContext(const Circuit& c) : c_(&c) {
    const std::size_t n = c.nodes.size();
    weights_.resize(n);
    halfspaces_.resize(n);
    for (NodeId id : c.topo) {
      std::visit(
          [&](const auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, SumNode>) {
              weights_[id] = normalized(node.log_weights);
            } else if constexpr (std::is_same_v<T, VTSumNode>) {
              weights_[id] = normalized(node.log_mixture);
              Tessellation t(node.centroids);
              halfspaces_[id].resize(node.centroids.size());
              for (int k = 0; k < t.num_cells(); ++k)
                halfspaces_[id][static_cast<std::size_t>(k)] = cell_halfspaces(t, k);
              has_vt_ = true;
            } else if constexpr (std::is_same_v<T, HFVSumNode>) {
              weights_[id] = normalized(node.log_joint);
            }
          },
          c.nodes[id]);
    }
    var_cells_.resize(c.var_centroids.size());
    for (std::size_t v = 0; v < c.var_centroids.size(); ++v)
      var_cells_[v] = univariate_cells(c.var_centroids[v]);
  }

  const Circuit& circuit() const { return *c_; }
  bool has_vt() const { return has_vt_; }
  const std::vector<double>& node_weights(NodeId id) const { return weights_[id]; }

  // Bounds on the box-restricted integral of the subcircuit at `id`. Exact
  // (lo = hi) for circuits without general Voronoi gates. Dimensions flagged
  // in `point_mask` are evidence: leaves there contribute point densities and
  // the box is degenerate in those dimensions. Voronoi gates resolve by box
  // classification against each cell; undecided cells widen only the upper
  // bound.
  BoundInterval integrate(NodeId id, Box& box, const std::vector<std::uint8_t>& point_mask) const {
    const Circuit& c = *c_;
    return std::visit(
        [&](const auto& node) -> BoundInterval {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, GaussianLeaf>) {
            if (!point_mask.empty() && point_mask[node.var]) {
              double v = std::exp(gaussian_log_pdf(box.lo[node.var], node.mean, node.stddev()));
              return {v, v};
            }
            double m =
                gaussian_interval_mass(box.lo[node.var], box.hi[node.var], node.mean,
                                       node.stddev());
            return {m, m};
          } else if constexpr (std::is_same_v<T, ProductNode>) {
            BoundInterval r{1.0, 1.0};
            for (NodeId ch : node.children) {
              BoundInterval b = integrate(ch, box, point_mask);
              r.lo *= b.lo;
              r.hi *= b.hi;
            }
            return r;
          } else if constexpr (std::is_same_v<T, SumNode>) {
            BoundInterval r{0.0, 0.0};
            for (std::size_t i = 0; i < node.children.size(); ++i) {
              BoundInterval b = integrate(node.children[i], box, point_mask);
              r.lo += weights_[id][i] * b.lo;
              r.hi += weights_[id][i] * b.hi;
            }
            return r;
          } else if constexpr (std::is_same_v<T, VTSumNode>) {
            return integrate_vt(id, node, box, point_mask);
          } else {
            return integrate_hfv(id, node, box, point_mask);
          }
        },
        c.nodes[id]);
  }

  // Exact box mass of the relaxed circuit obtained by dropping every gate
  // indicator (gated sums become plain mixtures). The relaxed density
  // dominates the hard one pointwise and integrates to 1 over the full
  // space, which yields computable out-of-domain tail bounds.
  double relaxed_mass(NodeId id, const std::vector<VarConstraint>& cons) const {
    const Circuit& c = *c_;
    return std::visit(
        [&](const auto& node) -> double {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, GaussianLeaf>) {
            const VarConstraint& vc = cons[node.var];
            if (vc.is_point)
              return std::exp(gaussian_log_pdf(vc.x, node.mean, node.stddev()));
            return gaussian_interval_mass(vc.iv.lo, vc.iv.hi, node.mean, node.stddev());
          } else if constexpr (std::is_same_v<T, ProductNode>) {
            double r = 1.0;
            for (NodeId ch : node.children) r *= relaxed_mass(ch, cons);
            return r;
          } else if constexpr (std::is_same_v<T, SumNode>) {
            double r = 0.0;
            for (std::size_t i = 0; i < node.children.size(); ++i)
              r += weights_[id][i] * relaxed_mass(node.children[i], cons);
            return r;
          } else if constexpr (std::is_same_v<T, VTSumNode>) {
            double r = 0.0;
            for (std::size_t k = 0; k < node.experts.size(); ++k)
              r += weights_[id][k] * relaxed_mass(node.experts[k], cons);
            return r;
          } else {
            const auto& bl = node.blocks[0];
            const auto& br = node.blocks[1];
            std::size_t kl = c.hfv_block_cell_count(bl);
            std::size_t kr = c.hfv_block_cell_count(br);
            std::vector<double> ml(kl), mr(kr);
            for (std::size_t a = 0; a < kl; ++a) ml[a] = relaxed_mass(bl.experts[a], cons);
            for (std::size_t b = 0; b < kr; ++b) mr[b] = relaxed_mass(br.experts[b], cons);
            double r = 0.0;
            for (std::size_t a = 0; a < kl; ++a)
              for (std::size_t b = 0; b < kr; ++b) r += weights_[id][a * kr + b] * ml[a] * mr[b];
            return r;
          }
        },
        c.nodes[id]);
  }

  // Upper bound on the query mass outside the working box: relaxed mass of
  // the full free space minus relaxed mass over the box's free ranges.
  double tail_upper(const Box& working, const std::vector<std::uint8_t>& point_mask) const {
    std::vector<VarConstraint> full(c_->num_vars), clipped(c_->num_vars);
    for (std::uint32_t v = 0; v < c_->num_vars; ++v) {
      if (!point_mask.empty() && point_mask[v]) {
        full[v] = clipped[v] = VarConstraint::Point(working.lo[v]);
      } else {
        full[v] = VarConstraint::Free();
        clipped[v] = VarConstraint::Range({working.lo[v], working.hi[v]});
      }
    }
    double t = relaxed_mass(c_->root, full) - relaxed_mass(c_->root, clipped);
    return t > 0.0 ? t : 0.0;
  }

  // Bottom-up pass over the whole circuit using per-cell inner/outer boxes:
  // lower bound integrates each expert over its inner box, upper bound over
  // its outer box plus the out-of-domain tail 1 - (expert mass over the
  // domain). Valid for the full-space partition function.
  BoundInterval prop_bounds(NodeId id, const Box& domain) const {
    const Circuit& c = *c_;
    static const std::vector<std::uint8_t> kNoPoints;
    return std::visit(
        [&](const auto& node) -> BoundInterval {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, GaussianLeaf>) {
            return {1.0, 1.0};
          } else if constexpr (std::is_same_v<T, ProductNode>) {
            BoundInterval r{1.0, 1.0};
            for (NodeId ch : node.children) {
              BoundInterval b = prop_bounds(ch, domain);
              r.lo *= b.lo;
              r.hi *= b.hi;
            }
            return r;
          } else if constexpr (std::is_same_v<T, SumNode>) {
            BoundInterval r{0.0, 0.0};
            for (std::size_t i = 0; i < node.children.size(); ++i) {
              BoundInterval b = prop_bounds(node.children[i], domain);
              r.lo += weights_[id][i] * b.lo;
              r.hi += weights_[id][i] * b.hi;
            }
            return r;
          } else if constexpr (std::is_same_v<T, VTSumNode>) {
            Tessellation tess(node.centroids);
            Box sd = project_scope(domain, node.scope);
            BoundInterval r{0.0, 0.0};
            for (std::size_t k = 0; k < node.experts.size(); ++k) {
              Box omega = embed_scope(sd, node.scope);
              double m_dom = integrate(node.experts[k], omega, kNoPoints).lo;
              double tail_k = std::max(0.0, 1.0 - m_dom);
              Box inner = embed_scope(inner_box(tess, static_cast<int>(k), sd), node.scope);
              Box outer = embed_scope(outer_box(tess, static_cast<int>(k), sd), node.scope);
              double lo_k = inner.empty() ? 0.0 : integrate(node.experts[k], inner, kNoPoints).lo;
              double hi_k = outer.empty() ? 0.0 : integrate(node.experts[k], outer, kNoPoints).hi;
              r.lo += weights_[id][k] * lo_k;
              r.hi += weights_[id][k] * (hi_k + tail_k);
            }
            return r;
          } else {
            // HFV: exact cell decomposition with possibly unbounded cell boxes
            const auto& bl = node.blocks[0];
            const auto& br = node.blocks[1];
            std::size_t kl = c.hfv_block_cell_count(bl);
            std::size_t kr = c.hfv_block_cell_count(br);
            auto block_bounds = [&](const HFVBlock& blk, std::size_t cells) {
              std::vector<BoundInterval> out(cells);
              std::vector<int> idx;
              for (std::size_t k = 0; k < cells; ++k) {
                c.hfv_decompose(blk, k, idx);
                Box b = Box::whole(static_cast<int>(c.num_vars));
                for (std::size_t i = 0; i < blk.vars.size(); ++i) {
                  const Interval& iv =
                      var_cells_[blk.vars[i]][static_cast<std::size_t>(idx[i])];
                  b.lo[blk.vars[i]] = iv.lo;
                  b.hi[blk.vars[i]] = iv.hi;
                }
                out[k] = integrate(blk.experts[k], b, kNoPoints);
              }
              return out;
            };
            auto ml = block_bounds(bl, kl);
            auto mr = block_bounds(br, kr);
            BoundInterval r{0.0, 0.0};
            for (std::size_t a = 0; a < kl; ++a)
              for (std::size_t b = 0; b < kr; ++b) {
                r.lo += weights_[id][a * kr + b] * ml[a].lo * mr[b].lo;
                r.hi += weights_[id][a * kr + b] * ml[a].hi * mr[b].hi;
              }
            return r;
          }
        },
        c.nodes[id]);
  }

 private:
  static std::vector<double> normalized(const std::vector<double>& logw) {
    std::vector<double> w = logw;
    log_normalize(w);
    for (auto& v : w) v = std::exp(v);
    return w;
  }

  static Box project_scope(const Box& box, const std::vector<VariableId>& scope) {
    Box b;
    b.lo.reserve(scope.size());
    b.hi.reserve(scope.size());
    for (VariableId v : scope) {
      b.lo.push_back(box.lo[v]);
      b.hi.push_back(box.hi[v]);
    }
    return b;
  }

  // Scope-space box lifted to full dimension; non-scope dims unconstrained
  // (the expert does not depend on them).
  Box embed_scope(const Box& sb, const std::vector<VariableId>& scope) const {
    if (sb.empty()) return Box::empty_box(static_cast<int>(c_->num_vars));
    Box b = Box::whole(static_cast<int>(c_->num_vars));
    for (std::size_t i = 0; i < scope.size(); ++i) {
      b.lo[scope[i]] = sb.lo[i];
      b.hi[scope[i]] = sb.hi[i];
    }
    return b;
  }

  BoundInterval integrate_vt(NodeId id, const VTSumNode& node, Box& box,
                             const std::vector<std::uint8_t>& point_mask) const {
    Box sb = project_scope(box, node.scope);
    bool is_point = true;
    for (int i = 0; i < sb.dim() && is_point; ++i) is_point = (sb.lo[i] == sb.hi[i]);
    const auto& w = weights_[id];
    if (is_point) {
      // degenerate in every gate dimension: the hard gate fires exactly one
      // cell, ties to the lowest index
      std::size_t best = 0;
      double bd = squared_distance(sb.lo, node.centroids[0]);
      for (std::size_t k = 1; k < node.centroids.size(); ++k) {
        double dk = squared_distance(sb.lo, node.centroids[k]);
        if (dk < bd) {
          bd = dk;
          best = k;
        }
      }
      BoundInterval b = integrate(node.experts[best], box, point_mask);
      return {w[best] * b.lo, w[best] * b.hi};
    }
    std::vector<CellLabel> labels(node.experts.size());
    bool seen_inside = false;
    for (std::size_t k = 0; k < node.experts.size(); ++k) {
      labels[k] = classify_box(sb, halfspaces_[id][k]);
      // closed cells can share a face with the box; the lower-index tie rule
      // means only the first Inside cell may claim the lower bound
      if (labels[k] == CellLabel::Inside) {
        if (seen_inside) labels[k] = CellLabel::Boundary;
        seen_inside = true;
      }
    }
    BoundInterval r{0.0, 0.0};
    for (std::size_t k = 0; k < node.experts.size(); ++k) {
      if (labels[k] == CellLabel::Outside) continue;
      BoundInterval b = integrate(node.experts[k], box, point_mask);
      if (labels[k] == CellLabel::Inside) r.lo += w[k] * b.lo;
      r.hi += w[k] * b.hi;
    }
    return r;
  }

  BoundInterval integrate_hfv(NodeId id, const HFVSumNode& node, Box& box,
                              const std::vector<std::uint8_t>& point_mask) const {
    const Circuit& c = *c_;
    const auto& bl = node.blocks[0];
    const auto& br = node.blocks[1];
    std::size_t kl = c.hfv_block_cell_count(bl);
    std::size_t kr = c.hfv_block_cell_count(br);
    auto block_bounds = [&](const HFVBlock& blk, std::size_t cells) {
      std::vector<BoundInterval> out(cells, {0.0, 0.0});
      std::vector<int> idx;
      std::vector<double> save_lo(blk.vars.size()), save_hi(blk.vars.size());
      for (std::size_t i = 0; i < blk.vars.size(); ++i) {
        save_lo[i] = box.lo[blk.vars[i]];
        save_hi[i] = box.hi[blk.vars[i]];
      }
      for (std::size_t k = 0; k < cells; ++k) {
        c.hfv_decompose(blk, k, idx);
        bool feasible = true;
        for (std::size_t i = 0; i < blk.vars.size() && feasible; ++i) {
          VariableId v = blk.vars[i];
          const Interval& iv = var_cells_[v][static_cast<std::size_t>(idx[i])];
          if (!point_mask.empty() && point_mask[v]) {
            if (!iv.contains(box.lo[v])) feasible = false;
          } else {
            double nl = std::max(save_lo[i], iv.lo);
            double nh = std::min(save_hi[i], iv.hi);
            if (!(nl < nh)) {
              feasible = false;
            } else {
              box.lo[v] = nl;
              box.hi[v] = nh;
            }
          }
        }
        if (feasible) out[k] = integrate(blk.experts[k], box, point_mask);
        for (std::size_t i = 0; i < blk.vars.size(); ++i) {
          box.lo[blk.vars[i]] = save_lo[i];
          box.hi[blk.vars[i]] = save_hi[i];
        }
      }
      return out;
    };
    auto ml = block_bounds(bl, kl);
    auto mr = block_bounds(br, kr);
    BoundInterval r{0.0, 0.0};
    for (std::size_t a = 0; a < kl; ++a)
      for (std::size_t b = 0; b < kr; ++b) {
        r.lo += weights_[id][a * kr + b] * ml[a].lo * mr[b].lo;
        r.hi += weights_[id][a * kr + b] * ml[a].hi * mr[b].hi;
      }
    return r;
  }

  const Circuit* c_;
  std::vector<std::vector<double>> weights_;
  std::vector<std::vector<std::vector<HalfSpace>>> halfspaces_;
  std::vector<std::vector<Interval>> var_cells_;
  bool has_vt_ = false;
};

// Bounds on the box-restricted integral of the (sub)circuit; exact for
// circuits without general Voronoi gates.
inline BoundInterval integrate_box(const Circuit& c, NodeId node, const Box& box) {
  if (box.dim() != static_cast<int>(c.num_vars))
    throw ArgumentError("integrate_box: box dimension mismatch");
  if (box.empty()) return {0.0, 0.0};
  CertContext ctx(c);
  Box b = box;
  return ctx.integrate(node, b, {});
}

inline BoundInterval integrate_box(const Circuit& c, const Box& box) {
  return integrate_box(c, c.root, box);
}

// Maximal possible effect of a boundary-labeled box on the global gap: the
// node's cell weight times the box-mass upper bound of the cell expert,
// scaled by the product of ancestor mixture weights on the path to the root.
inline double gap_contribution(const Circuit& c, NodeId vt_node, int cell, const Box& box,
                               double path_weight = 1.0) {
  const auto* node = std::get_if<VTSumNode>(&c.nodes.at(vt_node));
  if (!node) throw ArgumentError("gap_contribution: node is not Voronoi-gated");
  if (cell < 0 || cell >= node->num_cells())
    throw ArgumentError("gap_contribution: cell index out of range");
  if (box.empty()) return 0.0;
  CertContext ctx(c);
  double w = ctx.node_weights(vt_node)[static_cast<std::size_t>(cell)];
  Box b = box;
  BoundInterval bi = ctx.integrate(node->experts[static_cast<std::size_t>(cell)], b, {});
  return path_weight * w * bi.hi;
}

// One-shot bound propagation over inner/outer boxes (no refinement); valid
// interval around the full-space partition function.
inline BoundInterval certified_partition_bounds(const Circuit& c, const Box& domain) {
  if (domain.dim() != static_cast<int>(c.num_vars))
    throw ArgumentError("certified_partition_bounds: domain dimension mismatch");
  CertContext ctx(c);
  if (ctx.has_vt() && !domain.bounded())
    throw ConfigError("certified_partition_bounds: bounded domain required with Voronoi gates");
  BoundInterval b = ctx.prop_bounds(c.root, domain);
  if (b.lo > b.hi) b.lo = b.hi;
  return b;
}

struct RefineOptions {
  double epsilon = 1e-3;   // stop once hi - lo <= epsilon
  int max_iters = 500;
  bool include_tail = true;   // account for mass outside the domain
  bool warm_start = true;     // seed iteration 0 with inner/outer box bounds
  int resync_every = 64;      // full recomputation cadence; 0 = incremental only
};

struct RefineRow {
  int iter = 0;
  double z_lo = 0.0, z_hi = 0.0, gap = 0.0;
  std::size_t boxes_total = 0, boxes_boundary = 0;
};

struct CertifiedResult {
  BoundInterval bounds;
  bool converged = false;
  bool evidence_in_domain = true;
  std::size_t boxes_total = 0, boxes_boundary = 0;
  std::vector<RefineRow> trace;
};

namespace detail {

inline int longest_free_dim(const Box& b, const std::vector<std::uint8_t>& pm) {
  int best = -1;
  for (int i = 0; i < b.dim(); ++i) {
    if (!pm.empty() && pm[i]) continue;
    if (!std::isfinite(b.lo[i]) || !std::isfinite(b.hi[i]) || !(b.lo[i] < b.hi[i])) continue;
    if (best < 0 || b.side(i) > b.side(best)) best = i;
  }
  return best;
}

struct RefineSetup {
  Box working;
  std::vector<std::uint8_t> point_mask;
  double tail = 0.0;
  bool evidence_in_domain = true;
};

inline RefineSetup refine_setup(const CertContext& ctx, const Box& domain, const Evidence& ev,
                                bool include_tail) {
  const Circuit& c = ctx.circuit();
  if (domain.dim() != static_cast<int>(c.num_vars))
    throw ArgumentError("refine: domain dimension mismatch");
  if (ev.vars.size() != ev.values.size()) throw ArgumentError("refine: evidence size mismatch");
  RefineSetup s;
  s.working = domain;
  s.point_mask.assign(c.num_vars, 0);
  for (std::size_t i = 0; i < ev.vars.size(); ++i) {
    VariableId v = ev.vars[i];
    if (v >= c.num_vars) throw ArgumentError("refine: evidence variable out of range");
    if (s.point_mask[v]) throw ArgumentError("refine: duplicate evidence variable");
    if (!std::isfinite(ev.values[i]))
      throw ArgumentError("refine: non-finite evidence value");
    s.point_mask[v] = 1;
    if (ev.values[i] < domain.lo[v] || ev.values[i] > domain.hi[v])
      s.evidence_in_domain = false;
    s.working.lo[v] = s.working.hi[v] = ev.values[i];
  }
  for (std::uint32_t v = 0; v < c.num_vars; ++v) {
    if (!s.point_mask[v] &&
        (!std::isfinite(s.working.lo[v]) || !std::isfinite(s.working.hi[v])) &&
        ctx.has_vt())
      throw ConfigError("refine: bounded domain required with Voronoi gates");
  }
  s.tail = include_tail ? ctx.tail_upper(s.working, s.point_mask) : 0.0;
  return s;
}

}  // namespace detail

// Adaptive anytime refinement: partitions the working box, repeatedly bisects
// the undecided box with the largest bound gap along its longest free
// dimension, and keeps running-best bounds that tighten monotonically. Stops
// at the gap target or the iteration budget (anytime contract: the returned
// interval is valid either way).
inline CertifiedResult refine(const Circuit& c, const Box& domain, const RefineOptions& opt,
                              const Evidence& ev = {}) {
  if (!(opt.epsilon > 0.0)) throw ArgumentError("refine: epsilon must be positive");
  if (opt.max_iters < 0) throw ArgumentError("refine: negative iteration budget");
  CertContext ctx(c);
  detail::RefineSetup s = detail::refine_setup(ctx, domain, ev, opt.include_tail);

  struct Entry {
    Box box;
    BoundInterval b;
    bool alive = true;
    bool splittable = true;
  };
  std::vector<Entry> entries;
  std::priority_queue<std::pair<double, std::size_t>> heap;
  double settled_lo = 0.0, settled_hi = 0.0;
  std::size_t settled_count = 0;
  double active_lo = 0.0, active_hi = 0.0;
  std::size_t active_count = 0;

  auto add_box = [&](Box b) {
    BoundInterval bi = ctx.integrate(c.root, b, s.point_mask);
    if (bi.hi <= bi.lo) {
      settled_lo += bi.lo;
      settled_hi += bi.hi;
      ++settled_count;
      return;
    }
    bool sp = detail::longest_free_dim(b, s.point_mask) >= 0;
    entries.push_back({std::move(b), bi, true, sp});
    active_lo += bi.lo;
    active_hi += bi.hi;
    ++active_count;
    if (sp) heap.push({bi.hi - bi.lo, entries.size() - 1});
  };

  add_box(s.working);
  double best_lo = settled_lo + active_lo;
  double best_hi = settled_hi + active_hi + s.tail;
  if (opt.warm_start && ev.vars.empty() && domain.bounded() &&
      std::holds_alternative<VTSumNode>(c.nodes[c.root])) {
    BoundInterval ws = ctx.prop_bounds(c.root, domain);
    best_lo = std::max(best_lo, ws.lo);
    best_hi = std::min(best_hi, ws.hi);
  }

  CertifiedResult res;
  res.evidence_in_domain = s.evidence_in_domain;
  auto record = [&](int iter) {
    res.trace.push_back({iter, best_lo, best_hi, best_hi - best_lo, settled_count + active_count,
                         active_count});
  };
  record(0);

  for (int it = 1; it <= opt.max_iters && best_hi - best_lo > opt.epsilon; ++it) {
    std::size_t pick = entries.size();
    while (!heap.empty()) {
      auto [gap, idx] = heap.top();
      heap.pop();
      if (entries[idx].alive) {
        pick = idx;
        break;
      }
    }
    if (pick == entries.size()) break;  // nothing splittable remains
    Entry& e = entries[pick];
    e.alive = false;
    active_lo -= e.b.lo;
    active_hi -= e.b.hi;
    --active_count;
    int dim = detail::longest_free_dim(e.box, s.point_mask);
    auto [left, right] = bisect_box(e.box, dim);
    add_box(std::move(left));
    add_box(std::move(right));
    if (opt.resync_every > 0 && it % opt.resync_every == 0) {
      // full recomputation guards the incremental accumulators against drift
      active_lo = active_hi = 0.0;
      for (const Entry& en : entries) {
        if (!en.alive) continue;
        active_lo += en.b.lo;
        active_hi += en.b.hi;
      }
    }
    best_lo = std::max(best_lo, settled_lo + active_lo);
    best_hi = std::min(best_hi, settled_hi + active_hi + s.tail);
    record(it);
  }

  if (best_lo > best_hi) best_lo = best_hi;
  res.bounds = {best_lo, best_hi};
  res.converged = best_hi - best_lo <= opt.epsilon;
  res.boxes_total = settled_count + active_count;
  res.boxes_boundary = active_count;
  return res;
}

// Breadth-first refinement: at each depth step, every undecided box is split
// at its midpoint in all free dimensions (2^d children in d free dims). The
// trace has one row per depth level.
inline CertifiedResult refine_uniform(const Circuit& c, const Box& domain, int max_depth,
                                      double epsilon, bool include_tail = true,
                                      const Evidence& ev = {}) {
  if (!(epsilon > 0.0)) throw ArgumentError("refine_uniform: epsilon must be positive");
  if (max_depth < 0) throw ArgumentError("refine_uniform: negative depth budget");
  CertContext ctx(c);
  detail::RefineSetup s = detail::refine_setup(ctx, domain, ev, include_tail);

  double settled_lo = 0.0, settled_hi = 0.0;
  std::size_t settled_count = 0;
  std::vector<std::pair<Box, BoundInterval>> active;
  auto place = [&](Box b) {
    BoundInterval bi = ctx.integrate(c.root, b, s.point_mask);
    if (bi.hi <= bi.lo) {
      settled_lo += bi.lo;
      settled_hi += bi.hi;
      ++settled_count;
    } else {
      active.emplace_back(std::move(b), bi);
    }
  };
  place(s.working);

  auto sums = [&]() {
    double lo = settled_lo, hi = settled_hi + s.tail;
    for (const auto& [b, bi] : active) {
      lo += bi.lo;
      hi += bi.hi;
    }
    return BoundInterval{lo, hi};
  };
  BoundInterval cur = sums();
  double best_lo = cur.lo, best_hi = cur.hi;

  CertifiedResult res;
  res.evidence_in_domain = s.evidence_in_domain;
  auto record = [&](int depth) {
    res.trace.push_back({depth, best_lo, best_hi, best_hi - best_lo,
                         settled_count + active.size(), active.size()});
  };
  record(0);

  for (int depth = 1; depth <= max_depth && best_hi - best_lo > epsilon; ++depth) {
    std::vector<std::pair<Box, BoundInterval>> prev;
    prev.swap(active);
    bool split_any = false;
    for (auto& [b, bi] : prev) {
      // full midpoint subdivision across every splittable dimension
      std::vector<Box> pieces{b};
      for (int i = 0; i < b.dim(); ++i) {
        if (!s.point_mask.empty() && s.point_mask[i]) continue;
        if (!std::isfinite(b.lo[i]) || !std::isfinite(b.hi[i]) || !(b.lo[i] < b.hi[i])) continue;
        std::vector<Box> next;
        next.reserve(pieces.size() * 2);
        for (Box& p : pieces) {
          auto [l, r] = bisect_box(p, i);
          next.push_back(std::move(l));
          next.push_back(std::move(r));
        }
        pieces = std::move(next);
        split_any = true;
      }
      if (pieces.size() == 1) {
        active.emplace_back(std::move(pieces[0]), bi);  // unsplittable, stays
      } else {
        for (Box& p : pieces) place(std::move(p));
      }
    }
    cur = sums();
    best_lo = std::max(best_lo, cur.lo);
    best_hi = std::min(best_hi, cur.hi);
    record(depth);
    if (!split_any) break;
  }

  if (best_lo > best_hi) best_lo = best_hi;
  res.bounds = {best_lo, best_hi};
  res.converged = best_hi - best_lo <= epsilon;
  res.boxes_total = settled_count + active.size();
  res.boxes_boundary = active.size();
  return res;
}

// Interval around the marginal density p(x_A): evidence variables contribute
// point densities, the rest are integrated with refinement over the domain.
inline CertifiedResult marginal_bounds(const Circuit& c, const Evidence& ev, const Box& domain,
                                       const RefineOptions& opt = {}) {
  return refine(c, domain, opt, ev);
}

inline void write_refine_trace(std::ostream& os, const std::vector<RefineRow>& trace) {
  os << "iter,z_lo,z_hi,gap,boxes_total,boxes_boundary\n";
  os << std::setprecision(17);
  for (const RefineRow& r : trace)
    os << r.iter << ',' << r.z_lo << ',' << r.z_hi << ',' << r.gap << ',' << r.boxes_total << ','
       << r.boxes_boundary << '\n';
}

}  // namespace vpc
