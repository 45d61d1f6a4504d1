#pragma once

#include <numeric>
#include <optional>
#include <ostream>

#include "vpc/certified.hpp"
#include "vpc/circuit.hpp"
#include "vpc/data.hpp"
#include "vpc/hfv.hpp"
#include "vpc/rng.hpp"

namespace vpc {

constexpr double kLogStddevFloor = -6.907755278982137;  // log(1e-3)

// Flat view over every trainable parameter of a circuit, in node-id order:
// leaf (mean, log_stddev), sum logits, VT (mixture logits, centroid rows),
// HFV joint logits, then the shared per-variable centroid lists. Mixture
// vectors are unconstrained logits; evaluation log-softmax-normalizes them,
// so raw scatter keeps the density well-defined for finite-difference probes.
class ParamTable {
 public:
  explicit ParamTable(Circuit& c) : c_(&c) {
    off_.assign(c.nodes.size(), 0);
    std::size_t n = 0;
    for (std::size_t id = 0; id < c.nodes.size(); ++id) {
      off_[id] = n;
      std::visit(
          [&](const auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, GaussianLeaf>) {
              n += 2;
            } else if constexpr (std::is_same_v<T, SumNode>) {
              n += node.log_weights.size();
            } else if constexpr (std::is_same_v<T, VTSumNode>) {
              n += node.log_mixture.size() + node.centroids.size() * node.scope.size();
            } else if constexpr (std::is_same_v<T, HFVSumNode>) {
              n += node.log_joint.size();
            }
          },
          c.nodes[id]);
    }
    var_off_.resize(c.var_centroids.size());
    for (std::size_t v = 0; v < c.var_centroids.size(); ++v) {
      var_off_[v] = n;
      n += c.var_centroids[v].size();
    }
    size_ = n;
  }

  std::size_t size() const { return size_; }
  std::size_t node_offset(NodeId id) const { return off_[id]; }
  std::size_t var_offset(std::size_t v) const { return var_off_[v]; }
  Circuit& circuit() const { return *c_; }

  std::vector<double> gather() const {
    std::vector<double> p(size_);
    copy_params(true, p);
    return p;
  }

  // Writes raw values back without any constraint projection.
  void scatter_raw(const std::vector<double>& p) {
    if (p.size() != size_) throw ArgumentError("ParamTable: parameter vector size mismatch");
    copy_params(false, const_cast<std::vector<double>&>(p));
  }

  // Post-step constraint projection: mixture logits renormalized onto the
  // log-simplex, leaf log-stddevs floored against variance collapse.
  void project() {
    for (auto& node : c_->nodes) {
      std::visit(
          [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, GaussianLeaf>) {
              n.log_stddev = std::max(n.log_stddev, kLogStddevFloor);
            } else if constexpr (std::is_same_v<T, SumNode>) {
              log_normalize(n.log_weights);
            } else if constexpr (std::is_same_v<T, VTSumNode>) {
              log_normalize(n.log_mixture);
            } else if constexpr (std::is_same_v<T, HFVSumNode>) {
              log_normalize(n.log_joint);
            }
          },
          node);
    }
  }

 private:
  void copy_params(bool to_flat, std::vector<double>& p) const {
    std::size_t n = 0;
    auto put = [&](double& v) {
      if (to_flat)
        p[n++] = v;
      else
        v = p[n++];
    };
    for (auto& node : c_->nodes) {
      std::visit(
          [&](auto& nd) {
            using T = std::decay_t<decltype(nd)>;
            if constexpr (std::is_same_v<T, GaussianLeaf>) {
              put(nd.mean);
              put(nd.log_stddev);
            } else if constexpr (std::is_same_v<T, SumNode>) {
              for (double& w : nd.log_weights) put(w);
            } else if constexpr (std::is_same_v<T, VTSumNode>) {
              for (double& w : nd.log_mixture) put(w);
              for (auto& row : nd.centroids)
                for (double& v : row) put(v);
            } else if constexpr (std::is_same_v<T, HFVSumNode>) {
              for (double& w : nd.log_joint) put(w);
            }
          },
          const_cast<Node&>(node));
    }
    for (auto& cs : c_->var_centroids)
      for (double& v : const_cast<std::vector<double>&>(cs)) put(v);
  }

  Circuit* c_;
  std::vector<std::size_t> off_, var_off_;
  std::size_t size_ = 0;
};

// Mean soft-gated NLL of a batch; the objective train/backward optimize.
inline double soft_nll(const Circuit& c, const Points& batch, double alpha) {
  if (batch.empty()) throw ArgumentError("soft_nll: empty batch");
  double s = 0.0;
  for (const auto& x : batch) s -= eval_log_density(c, x, EvalMode::Soft(alpha));
  return s / static_cast<double>(batch.size());
}

struct BatchGrad {
  std::vector<double> grad;  // d(mean NLL)/d(params), ParamTable layout
  double nll = 0.0;
};

// Reverse-mode gradients of the batch mean NLL through the soft-gated
// log-domain forward pass. Adjoints live on node log-values; gate gradients
// include the softmax cross-terms 2*alpha*(x - c_j)*(r_j - w_j).
inline BatchGrad backward(const Circuit& c, const ParamTable& pt, const Points& batch,
                          double alpha) {
  if (batch.empty()) throw ArgumentError("backward: empty batch");
  if (!(alpha > 0.0)) throw ArgumentError("backward: alpha must be positive");
  BatchGrad out;
  out.grad.assign(pt.size(), 0.0);
  std::vector<double>& g = out.grad;
  std::vector<double> logv, adj;
  const EvalMode mode = EvalMode::Soft(alpha);
  std::vector<int> digits;

  for (const auto& xv : batch) {
    std::span<const double> x(xv);
    detail::forward_log(c, x, mode, logv);
    double lf = logv[c.root];
    if (!std::isfinite(lf)) throw NumericError("backward: non-finite log-density");
    out.nll -= lf;
    adj.assign(c.nodes.size(), 0.0);
    adj[c.root] = 1.0;
    for (std::size_t i = c.topo.size(); i-- > 0;) {
      NodeId id = c.topo[i];
      double a = adj[id];
      if (a == 0.0) continue;
      std::size_t off = pt.node_offset(id);
      std::visit(
          [&](const auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, GaussianLeaf>) {
              double sd = node.stddev();
              double z = (x[node.var] - node.mean) / sd;
              g[off] += a * z / sd;          // d logpdf / d mean
              g[off + 1] += a * (z * z - 1.0);  // d logpdf / d log_stddev
            } else if constexpr (std::is_same_v<T, ProductNode>) {
              for (NodeId ch : node.children) adj[ch] += a;
            } else if constexpr (std::is_same_v<T, SumNode>) {
              std::vector<double> lw = node.log_weights;
              log_normalize(lw);
              for (std::size_t j = 0; j < node.children.size(); ++j) {
                double r = std::exp(lw[j] + logv[node.children[j]] - logv[id]);
                adj[node.children[j]] += a * r;
                g[off + j] += a * (r - std::exp(lw[j]));
              }
            } else if constexpr (std::is_same_v<T, VTSumNode>) {
              const std::size_t K = node.centroids.size();
              const std::size_t d = node.scope.size();
              std::vector<double> u(d);
              for (std::size_t j = 0; j < d; ++j) u[j] = x[node.scope[j]];
              auto lg = soft_log_weights(node.centroids, u, alpha);
              std::vector<double> lpi = node.log_mixture;
              log_normalize(lpi);
              std::size_t coff = off + K;
              for (std::size_t k = 0; k < K; ++k) {
                double r = std::exp(lg[k] + lpi[k] + logv[node.experts[k]] - logv[id]);
                double w = std::exp(lg[k]);
                adj[node.experts[k]] += a * r;
                g[off + k] += a * (r - std::exp(lpi[k]));
                double coef = a * 2.0 * alpha * (r - w);
                for (std::size_t j = 0; j < d; ++j)
                  g[coff + k * d + j] += coef * (u[j] - node.centroids[k][j]);
              }
            } else if constexpr (std::is_same_v<T, HFVSumNode>) {
              const auto& bl = node.blocks[0];
              const auto& br = node.blocks[1];
              std::size_t kl = c.hfv_block_cell_count(bl);
              std::size_t kr = c.hfv_block_cell_count(br);
              std::vector<double> lpi = node.log_joint;
              log_normalize(lpi);
              auto gates = [&](const HFVBlock& b, std::size_t cells,
                               std::vector<std::vector<double>>& per) {
                per.resize(b.vars.size());
                for (std::size_t q = 0; q < b.vars.size(); ++q)
                  per[q] = soft_log_weights_1d(c.var_centroids[b.vars[q]], x[b.vars[q]], alpha);
                std::vector<double> out_g(cells, 0.0);
                for (std::size_t k = 0; k < cells; ++k) {
                  c.hfv_decompose(b, k, digits);
                  for (std::size_t q = 0; q < b.vars.size(); ++q)
                    out_g[k] += per[q][static_cast<std::size_t>(digits[q])];
                }
                return out_g;
              };
              std::vector<std::vector<double>> perL, perR;
              auto gl = gates(bl, kl, perL);
              auto gr = gates(br, kr, perR);
              std::vector<double> rho_l(kl, 0.0), rho_r(kr, 0.0);
              for (std::size_t ka = 0; ka < kl; ++ka)
                for (std::size_t kb = 0; kb < kr; ++kb) {
                  double r = std::exp(lpi[ka * kr + kb] + gl[ka] + gr[kb] +
                                      logv[bl.experts[ka]] + logv[br.experts[kb]] - logv[id]);
                  rho_l[ka] += r;
                  rho_r[kb] += r;
                  g[off + ka * kr + kb] += a * (r - std::exp(lpi[ka * kr + kb]));
                }
              for (std::size_t ka = 0; ka < kl; ++ka) adj[bl.experts[ka]] += a * rho_l[ka];
              for (std::size_t kb = 0; kb < kr; ++kb) adj[br.experts[kb]] += a * rho_r[kb];
              // per-variable cell responsibilities drive the shared
              // univariate centroid gradients
              auto centroid_grads = [&](const HFVBlock& b, std::size_t cells,
                                        const std::vector<std::vector<double>>& per,
                                        const std::vector<double>& rho) {
                std::vector<std::vector<double>> q(b.vars.size());
                for (std::size_t i2 = 0; i2 < b.vars.size(); ++i2)
                  q[i2].assign(c.var_centroids[b.vars[i2]].size(), 0.0);
                for (std::size_t k = 0; k < cells; ++k) {
                  c.hfv_decompose(b, k, digits);
                  for (std::size_t i2 = 0; i2 < b.vars.size(); ++i2)
                    q[i2][static_cast<std::size_t>(digits[i2])] += rho[k];
                }
                for (std::size_t i2 = 0; i2 < b.vars.size(); ++i2) {
                  VariableId v = b.vars[i2];
                  std::size_t voff = pt.var_offset(v);
                  for (std::size_t j = 0; j < c.var_centroids[v].size(); ++j) {
                    double w = std::exp(per[i2][j]);
                    g[voff + j] += a * 2.0 * alpha * (q[i2][j] - w) *
                                   (x[v] - c.var_centroids[v][j]);
                  }
                }
              };
              centroid_grads(bl, kl, perL, rho_l);
              centroid_grads(br, kr, perR, rho_r);
            }
          },
          c.nodes[id]);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& v : g) {
    v *= -inv;  // accumulated d log f; NLL flips the sign
    if (!std::isfinite(v)) throw NumericError("backward: non-finite gradient entry");
  }
  out.nll *= inv;
  return out;
}

struct Adam {
  double lr = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  long t = 0;

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
};

// k-means++ seeding followed by Lloyd iterations; empty clusters reseed to
// the point farthest from its assigned centroid. Deterministic given seed.
inline std::vector<std::vector<double>> kmeans_init(const Points& data, std::size_t k,
                                                    int iters = 100, std::uint64_t seed = 0) {
  if (data.size() < k || k == 0) throw ArgumentError("kmeans_init: need at least K points");
  const std::size_t n = data.size(), d = data[0].size();
  SplitMix64 rng(seed);
  std::vector<std::vector<double>> cents;
  cents.push_back(data[rng.uniform_index(n)]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(data[i], cents[0]);
  while (cents.size() < k) {
    double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (!(total > 0.0))
      throw ArgumentError("kmeans_init: fewer than K distinct points (degenerate data)");
    double u = rng.uniform() * total;
    std::size_t pick = n - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (u <= acc) {
        pick = i;
        break;
      }
    }
    cents.push_back(data[pick]);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(data[i], cents.back()));
  }

  std::vector<std::size_t> assign(n);
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = squared_distance(data[i], cents[0]);
      for (std::size_t j = 1; j < k; ++j) {
        double dj = squared_distance(data[i], cents[j]);
        if (dj < bd) {
          bd = dj;
          best = j;
        }
      }
      assign[i] = best;
      d2[i] = bd;
    }
    std::vector<std::vector<double>> next(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) next[assign[i]][j] += data[i][j];
      ++count[assign[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] == 0) {
        // reseed to the globally farthest point
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (d2[i] > d2[far]) far = i;
        next[j] = data[far];
        d2[far] = 0.0;
      } else {
        for (double& v : next[j]) v /= static_cast<double>(count[j]);
      }
    }
    cents = std::move(next);
  }
  for (std::size_t a = 0; a + 1 < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b)
      if (squared_distance(cents[a], cents[b]) <= 1e-18)
        throw ArgumentError("kmeans_init: duplicate centroids (degenerate data)");
  return cents;
}

inline std::vector<double> kmeans_init_1d(const std::vector<double>& values, std::size_t k,
                                          int iters = 100, std::uint64_t seed = 0) {
  Points pts;
  pts.reserve(values.size());
  for (double v : values) pts.push_back({v});
  auto cents = kmeans_init(pts, k, iters, seed);
  std::vector<double> out;
  out.reserve(k);
  for (const auto& c : cents) out.push_back(c[0]);
  std::sort(out.begin(), out.end());
  return out;
}

struct SoftGateConfig {
  double alpha_start = 1.0;
  double alpha_end = 50.0;
};

inline double anneal_alpha(int epoch, int total_epochs, const SoftGateConfig& cfg) {
  if (epoch < 0 || epoch >= total_epochs) throw ArgumentError("anneal_alpha: epoch out of range");
  if (!(cfg.alpha_start > 0.0) || !(cfg.alpha_end > 0.0) || cfg.alpha_start > cfg.alpha_end)
    throw ArgumentError("anneal_alpha: invalid schedule");
  if (total_epochs == 1) return cfg.alpha_start;
  return cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) * static_cast<double>(epoch) /
                               static_cast<double>(total_epochs - 1);
}

// Sorts each shared univariate centroid list and permutes every HFV node's
// expert arrays and joint tensors to match. Soft training is order-free, but
// the exact inference and certification paths require sorted lists.
inline void canonicalize_hfv(Circuit& c) {
  for (std::size_t v = 0; v < c.var_centroids.size(); ++v) {
    auto& cs = c.var_centroids[v];
    std::vector<std::size_t> order(cs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return cs[a] < cs[b]; });
    bool identity = true;
    for (std::size_t i = 0; i < order.size(); ++i) identity = identity && order[i] == i;
    if (identity) continue;

    std::vector<int> digits;
    for (auto& nvar : c.nodes) {
      auto* h = std::get_if<HFVSumNode>(&nvar);
      if (!h) continue;
      std::array<std::vector<std::size_t>, 2> maps;
      for (int bi = 0; bi < 2; ++bi) {
        const HFVBlock& blk = h->blocks[bi];
        std::size_t cells = c.hfv_block_cell_count(blk);
        maps[bi].resize(cells);
        std::size_t pos = blk.vars.size();
        for (std::size_t q = 0; q < blk.vars.size(); ++q)
          if (blk.vars[q] == v) pos = q;
        for (std::size_t knew = 0; knew < cells; ++knew) {
          if (pos == blk.vars.size()) {
            maps[bi][knew] = knew;
            continue;
          }
          c.hfv_decompose(blk, knew, digits);
          digits[pos] = static_cast<int>(order[static_cast<std::size_t>(digits[pos])]);
          std::size_t old = 0;
          for (std::size_t q = 0; q < blk.vars.size(); ++q)
            old = old * c.var_centroids[blk.vars[q]].size() +
                  static_cast<std::size_t>(digits[q]);
          maps[bi][knew] = old;
        }
      }
      for (int bi = 0; bi < 2; ++bi) {
        std::vector<NodeId> ne(h->blocks[bi].experts.size());
        for (std::size_t kk = 0; kk < ne.size(); ++kk)
          ne[kk] = h->blocks[bi].experts[maps[bi][kk]];
        h->blocks[bi].experts = std::move(ne);
      }
      std::size_t kr = maps[1].size();
      std::vector<double> nj(h->log_joint.size());
      for (std::size_t a = 0; a < maps[0].size(); ++a)
        for (std::size_t b = 0; b < kr; ++b)
          nj[a * kr + b] = h->log_joint[maps[0][a] * kr + maps[1][b]];
      h->log_joint = std::move(nj);
    }
    std::vector<double> sorted(cs.size());
    for (std::size_t r = 0; r < cs.size(); ++r) sorted[r] = cs[order[r]];
    cs = std::move(sorted);
  }
}

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 500;
  int epochs = 100;
  std::uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  SoftGateConfig gate;
  int snapshot_stride = 10;  // certified hard-gated validation cadence; 0 disables
  RefineOptions refine;      // budget for the certified columns
  double domain_padding = 0.5;
};

struct TrainTraceRow {
  int epoch = 0;
  double alpha = 0.0;
  double train_nll = 0.0;
  double val_ll_soft = 0.0;
  std::optional<double> val_ll_hard_lo, val_ll_hard_hi;
};

struct TrainResult {
  Circuit circuit;  // best-validation snapshot, canonicalized
  std::vector<TrainTraceRow> trace;
  int best_epoch = -1;
  bool aborted = false;
};

inline Box data_domain(const Points& pts, double padding) {
  if (pts.empty()) throw ArgumentError("data_domain: empty data");
  const std::size_t d = pts[0].size();
  Box b(std::vector<double>(d, kInf), std::vector<double>(d, kNegInf));
  for (const auto& p : pts)
    for (std::size_t j = 0; j < d; ++j) {
      b.lo[j] = std::min(b.lo[j], p[j]);
      b.hi[j] = std::max(b.hi[j], p[j]);
    }
  for (std::size_t j = 0; j < d; ++j) {
    b.lo[j] -= padding;
    b.hi[j] += padding;
  }
  return b;
}

// Certified hard-gated validation log-likelihood bounds at a snapshot:
// mean hard log-density minus log of the partition-function bounds. Exact
// (lo = hi) for circuits whose gates are all HFV or absent.
inline std::pair<double, double> hard_ll_bounds(const Circuit& c, const Points& val,
                                                const Box& domain, const RefineOptions& ropt) {
  Circuit cc = c;
  canonicalize_hfv(cc);
  double mean_logf = 0.0;
  for (const auto& x : val) mean_logf += eval_log_density(cc, x, EvalMode::Hard());
  mean_logf /= static_cast<double>(val.size());
  double log_z_lo, log_z_hi;
  if (is_hfv_circuit(cc)) {
    log_z_lo = log_z_hi = hfv_log_partition(cc);
  } else {
    CertifiedResult r = refine(cc, domain, ropt);
    log_z_lo = r.bounds.lo > 0.0 ? std::log(r.bounds.lo) : kNegInf;
    log_z_hi = std::log(r.bounds.hi);
  }
  return {mean_logf - log_z_hi, mean_logf - log_z_lo};
}

// Annealed soft-gating maximum likelihood: seeded shuffling, Adam on the
// flat parameter vector, post-step projection, soft validation per epoch,
// best-validation snapshot retained. Aborts to the last good snapshot on
// numeric failure.
inline TrainResult train(Circuit circuit, const Points& train_data, const Points& val_data,
                         const TrainConfig& cfg) {
  if (train_data.empty() || val_data.empty()) throw ArgumentError("train: empty data");
  if (train_data[0].size() != circuit.num_vars)
    throw ArgumentError("train: data dimension mismatch");
  if (cfg.batch_size == 0 || cfg.epochs <= 0 || !(cfg.learning_rate >= 0.0))
    throw ArgumentError("train: invalid configuration");

  ParamTable pt(circuit);
  pt.project();
  std::vector<double> params = pt.gather();
  Adam opt{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps};
  SplitMix64 shuffle_rng(cfg.seed);

  TrainResult res;
  double best_val = kNegInf;
  std::vector<double> best_params = params;

  const bool gated = !is_hfv_circuit(circuit) || !circuit.var_centroids.empty();
  Box domain = data_domain(train_data, cfg.domain_padding);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double alpha = anneal_alpha(epoch, cfg.epochs, cfg.gate);
    std::vector<std::size_t> perm = shuffle_rng.permutation(train_data.size());
    double epoch_nll = 0.0;
    bool failed = false;
    for (std::size_t start = 0; start < perm.size(); start += cfg.batch_size) {
      std::size_t stop = std::min(perm.size(), start + cfg.batch_size);
      Points batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train_data[perm[i]]);
      try {
        BatchGrad bg = backward(circuit, pt, batch, alpha);
        epoch_nll += bg.nll * static_cast<double>(batch.size());
        opt.step(params, bg.grad);
        pt.scatter_raw(params);
        pt.project();
        params = pt.gather();
      } catch (const NumericError&) {
        failed = true;
        break;
      }
    }
    if (failed) {
      res.aborted = true;
      break;
    }
    epoch_nll /= static_cast<double>(perm.size());

    TrainTraceRow row;
    row.epoch = epoch;
    row.alpha = alpha;
    row.train_nll = epoch_nll;
    double val_ll = 0.0;
    for (const auto& x : val_data) val_ll += eval_log_density(circuit, x, EvalMode::Soft(alpha));
    val_ll /= static_cast<double>(val_data.size());
    row.val_ll_soft = val_ll;
    if (!std::isfinite(val_ll)) {
      res.aborted = true;
      res.trace.push_back(row);
      break;
    }
    if (val_ll > best_val) {
      best_val = val_ll;
      best_params = params;
      res.best_epoch = epoch;
    }
    bool snapshot = cfg.snapshot_stride > 0 &&
                    (epoch % cfg.snapshot_stride == 0 || epoch == cfg.epochs - 1);
    if (snapshot && gated) {
      auto [lo, hi] = hard_ll_bounds(circuit, val_data, domain, cfg.refine);
      row.val_ll_hard_lo = lo;
      row.val_ll_hard_hi = hi;
    }
    res.trace.push_back(row);
  }

  pt.scatter_raw(best_params);
  pt.project();
  canonicalize_hfv(circuit);
  res.circuit = std::move(circuit);
  return res;
}

inline void write_train_trace(std::ostream& os, const std::vector<TrainTraceRow>& trace) {
  os << "epoch,alpha,train_nll,val_ll_soft,val_ll_hard_lo,val_ll_hard_hi\n";
  os << std::setprecision(17);
  for (const auto& r : trace) {
    os << r.epoch << ',' << r.alpha << ',' << r.train_nll << ',' << r.val_ll_soft << ',';
    if (r.val_ll_hard_lo) os << *r.val_ll_hard_lo;
    os << ',';
    if (r.val_ll_hard_hi) os << *r.val_ll_hard_hi;
    os << '\n';
  }
}

}  // namespace vpc
