#pragma once

#include "vpc/circuit.hpp"
#include "vpc/data.hpp"
#include "vpc/hfv.hpp"
#include "vpc/train.hpp"

namespace vpc {

enum class VtreeKind { RandomBinary, LeftLinear };

inline Vtree make_vtree(VtreeKind kind, std::uint32_t num_vars, std::uint64_t seed) {
  return kind == VtreeKind::LeftLinear ? left_linear_vtree(num_vars)
                                       : random_vtree(num_vars, seed);
}

inline std::size_t default_units(std::uint32_t num_vars) { return num_vars >= 3 ? 10 : 5; }

namespace detail {

// Region of `units` interchangeable sum roots over a vtree node. Leaves get
// unit-variance Gaussians jittered around zero; internal regions take the
// full cross product of child units under randomly weighted sums.
inline std::vector<NodeId> build_region(Circuit& c, const Vtree& vt, int vid, std::size_t units,
                                        SplitMix64& rng) {
  std::vector<NodeId> out;
  if (vt.is_leaf(vid)) {
    VariableId v = vt.nodes[static_cast<std::size_t>(vid)].var;
    for (std::size_t u = 0; u < units; ++u) {
      GaussianLeaf leaf;
      leaf.var = v;
      leaf.mean = rng.normal(0.0, 1.0);
      leaf.log_stddev = 0.0;
      out.push_back(c.add(leaf));
    }
    return out;
  }
  auto left = build_region(c, vt, vt.nodes[static_cast<std::size_t>(vid)].left, units, rng);
  auto right = build_region(c, vt, vt.nodes[static_cast<std::size_t>(vid)].right, units, rng);
  std::vector<NodeId> products;
  for (NodeId l : left)
    for (NodeId r : right) products.push_back(c.add(ProductNode{{l, r}}));
  const std::size_t roots = (vid == vt.root) ? 1 : units;
  for (std::size_t u = 0; u < roots; ++u) {
    SumNode s;
    s.children = products;
    for (std::size_t j = 0; j < products.size(); ++j)
      s.log_weights.push_back(rng.normal(0.0, 0.5));
    log_normalize(s.log_weights);
    out.push_back(c.add(std::move(s)));
  }
  return out;
}

// Same region recursion but with a single root sum even at sub-roots, used
// for VT experts that need one entry node each.
inline NodeId build_expert(Circuit& c, const Vtree& vt, std::size_t units, SplitMix64& rng,
                           const std::vector<double>& center) {
  std::vector<NodeId> region;
  if (vt.nodes.size() == 1 && vt.is_leaf(vt.root)) {
    GaussianLeaf leaf;
    leaf.var = vt.nodes[0].var;
    leaf.mean = center.empty() ? rng.normal(0.0, 1.0) : center[leaf.var];
    leaf.log_stddev = 0.0;
    return c.add(leaf);
  }
  struct Rec {
    Circuit& c;
    const Vtree& vt;
    std::size_t units;
    SplitMix64& rng;
    const std::vector<double>& center;
    std::vector<NodeId> operator()(int vid) {
      std::vector<NodeId> out;
      if (this->vt.is_leaf(vid)) {
        VariableId v = this->vt.nodes[static_cast<std::size_t>(vid)].var;
        for (std::size_t u = 0; u < this->units; ++u) {
          GaussianLeaf leaf;
          leaf.var = v;
          double base = this->center.empty() ? 0.0 : this->center[v];
          leaf.mean = base + this->rng.normal(0.0, 0.5);
          leaf.log_stddev = std::log(0.5);
          out.push_back(this->c.add(leaf));
        }
        return out;
      }
      auto left = (*this)(this->vt.nodes[static_cast<std::size_t>(vid)].left);
      auto right = (*this)(this->vt.nodes[static_cast<std::size_t>(vid)].right);
      std::vector<NodeId> products;
      for (NodeId l : left)
        for (NodeId r : right) products.push_back(this->c.add(ProductNode{{l, r}}));
      std::size_t roots = (vid == this->vt.root) ? 1 : this->units;
      for (std::size_t u = 0; u < roots; ++u) {
        SumNode s;
        s.children = products;
        for (std::size_t j = 0; j < products.size(); ++j)
          s.log_weights.push_back(this->rng.normal(0.0, 0.5));
        log_normalize(s.log_weights);
        out.push_back(this->c.add(std::move(s)));
      }
      return out;
    }
  };
  region = Rec{c, vt, units, rng, center}(vt.root);
  return region.front();
}

}  // namespace detail

// Ungated smooth decomposable mixture circuit over a binary vtree.
inline Circuit build_baseline(std::uint32_t num_vars, std::size_t units, VtreeKind kind,
                              std::uint64_t seed) {
  if (num_vars == 0) throw ArgumentError("build_baseline: need at least one variable");
  Circuit c;
  c.num_vars = num_vars;
  SplitMix64 rng(seed);
  Vtree vt = make_vtree(kind, num_vars, seed ^ 0x7674726565ULL);
  if (num_vars == 1) {
    std::vector<NodeId> leaves;
    for (std::size_t u = 0; u < units; ++u) {
      GaussianLeaf leaf;
      leaf.var = 0;
      leaf.mean = rng.normal(0.0, 1.0);
      leaf.log_stddev = 0.0;
      leaves.push_back(c.add(leaf));
    }
    SumNode s;
    s.children = leaves;
    s.log_weights.assign(leaves.size(), -std::log(static_cast<double>(leaves.size())));
    c.root = c.add(std::move(s));
  } else {
    c.root = detail::build_region(c, vt, vt.root, units, rng).front();
  }
  c.finalize();
  return c;
}

// Root-level Voronoi-gated model: K experts (one baseline-style circuit
// each, localized around its k-means centroid) behind a VT sum whose
// tessellation is seeded from the data.
inline Circuit build_vt_model(const Points& data, std::size_t k, std::size_t units,
                              VtreeKind kind, std::uint64_t seed) {
  if (data.empty()) throw ArgumentError("build_vt_model: empty data");
  const std::uint32_t d = static_cast<std::uint32_t>(data[0].size());
  auto centroids = kmeans_init(data, k, 100, seed);
  Circuit c;
  c.num_vars = d;
  SplitMix64 rng(seed ^ 0x6578706572ULL);
  Vtree vt = make_vtree(kind, d, seed ^ 0x7674726565ULL);
  VTSumNode node;
  for (std::uint32_t v = 0; v < d; ++v) node.scope.push_back(v);
  node.centroids = centroids;
  node.log_mixture.assign(k, -std::log(static_cast<double>(k)));
  for (std::size_t i = 0; i < k; ++i)
    node.experts.push_back(detail::build_expert(c, vt, units, rng, centroids[i]));
  c.root = c.add(std::move(node));
  c.finalize();
  return c;
}

// Hierarchically factorized model: per-variable univariate centroids from
// 1-D k-means, cell-conditioned Gaussian leaves centered on their cells.
inline Circuit build_hfv_model(const Points& data, std::size_t cells_per_var, VtreeKind kind,
                               std::uint64_t seed) {
  if (data.empty()) throw ArgumentError("build_hfv_model: empty data");
  const std::uint32_t d = static_cast<std::uint32_t>(data[0].size());
  if (d < 2) throw ArgumentError("build_hfv_model: need at least two variables");
  std::vector<std::vector<double>> var_centroids(d);
  for (std::uint32_t v = 0; v < d; ++v) {
    std::vector<double> col;
    col.reserve(data.size());
    for (const auto& p : data) col.push_back(p[v]);
    var_centroids[v] = kmeans_init_1d(col, cells_per_var, 100, seed + v);
    for (std::size_t i = 0; i + 1 < var_centroids[v].size(); ++i)
      if (!(var_centroids[v][i + 1] - var_centroids[v][i] > 1e-9))
        throw ArgumentError("build_hfv_model: degenerate univariate centroids");
  }
  Vtree vt = make_vtree(kind, d, seed ^ 0x7674726565ULL);
  auto init = [&](VariableId v, int cell) {
    GaussianLeaf leaf;
    leaf.var = v;
    leaf.mean = var_centroids[v][static_cast<std::size_t>(cell)];
    // half the gap to the nearest neighboring centroid, floored
    const auto& cs = var_centroids[v];
    double gap = kInf;
    auto ci = static_cast<std::size_t>(cell);
    if (ci > 0) gap = std::min(gap, cs[ci] - cs[ci - 1]);
    if (ci + 1 < cs.size()) gap = std::min(gap, cs[ci + 1] - cs[ci]);
    if (!std::isfinite(gap)) gap = 1.0;
    leaf.log_stddev = std::log(std::max(0.5 * gap, 1e-2));
    return leaf;
  };
  return build_hfv(vt, var_centroids, init);
}

}  // namespace vpc
