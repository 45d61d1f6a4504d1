#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "vpc/box.hpp"
#include "vpc/common.hpp"
#include "vpc/lp.hpp"

namespace vpc {

constexpr double kMinCentroidSeparation = 1e-9;

// Euclidean Voronoi tessellation given by its centroids. Cells are closed
// half-space intersections; boundary points belong to the lowest-indexed cell.
class Tessellation {
 public:
  explicit Tessellation(std::vector<std::vector<double>> centroids)
      : centroids_(std::move(centroids)) {
    if (centroids_.empty()) throw ArgumentError("Tessellation: need at least one centroid");
    const std::size_t d = centroids_[0].size();
    for (const auto& c : centroids_)
      if (c.size() != d) throw ArgumentError("Tessellation: inconsistent centroid dimensions");
    for (std::size_t k = 0; k + 1 < centroids_.size(); ++k)
      for (std::size_t j = k + 1; j < centroids_.size(); ++j)
        if (squared_distance(centroids_[k], centroids_[j]) <=
            kMinCentroidSeparation * kMinCentroidSeparation)
          throw ArgumentError("Tessellation: duplicate centroids (cells degenerate)");
  }

  int num_cells() const { return static_cast<int>(centroids_.size()); }
  int dim() const { return static_cast<int>(centroids_[0].size()); }
  const std::vector<double>& centroid(int k) const { return centroids_[static_cast<std::size_t>(k)]; }
  const std::vector<std::vector<double>>& centroids() const { return centroids_; }

 private:
  std::vector<std::vector<double>> centroids_;
};

struct Margin {
  int nearest_cell = 0;
  double gamma = kInf;  // squared-distance gap to the runner-up
};

enum class CellLabel { Inside, Outside, Boundary };

// Half-space representation of cell k:
//   V_k = /\_{j!=k} { x : (c_j - c_k).x <= (|c_j|^2 - |c_k|^2) / 2 }.
// K = 1 yields the empty list (cell is all of R^d).
inline std::vector<HalfSpace> cell_halfspaces(const Tessellation& tess, int k) {
  if (k < 0 || k >= tess.num_cells()) throw ArgumentError("cell_halfspaces: cell index out of range");
  const int d = tess.dim();
  std::vector<HalfSpace> out;
  out.reserve(static_cast<std::size_t>(tess.num_cells() - 1));
  const auto& ck = tess.centroid(k);
  for (int j = 0; j < tess.num_cells(); ++j) {
    if (j == k) continue;
    const auto& cj = tess.centroid(j);
    HalfSpace h;
    h.normal.resize(d);
    double nj = 0.0, nk = 0.0;
    for (int i = 0; i < d; ++i) {
      h.normal[i] = cj[i] - ck[i];
      nj += cj[i] * cj[i];
      nk += ck[i] * ck[i];
    }
    h.offset = 0.5 * (nj - nk);
    out.push_back(std::move(h));
  }
  return out;
}

inline Margin nearest_centroid(const Tessellation& tess, std::span<const double> u) {
  int best = 0;
  double best_d = squared_distance(u, tess.centroid(0));
  double second = kInf;
  for (int k = 1; k < tess.num_cells(); ++k) {
    double dk = squared_distance(u, tess.centroid(k));
    if (dk < best_d) {
      second = best_d;
      best_d = dk;
      best = k;
    } else if (dk < second) {
      second = dk;
    }
  }
  Margin m;
  m.nearest_cell = best;
  m.gamma = (tess.num_cells() == 1) ? kInf : second - best_d;
  return m;
}

// Extrema of a.x over a box: pick the upper bound where a_i >= 0 for the max,
// the lower bound otherwise (and vice versa for the min). Infinite bounds on
// active coefficients make the extremum infinite.
inline std::pair<double, double> halfspace_extrema(const HalfSpace& h, const Box& box) {
  double mx = 0.0, mn = 0.0;
  for (int i = 0; i < box.dim(); ++i) {
    double a = h.normal[i];
    if (a == 0.0) continue;
    double at_max = (a > 0.0) ? box.hi[i] : box.lo[i];
    double at_min = (a > 0.0) ? box.lo[i] : box.hi[i];
    mx += a * at_max;
    mn += a * at_min;
  }
  return {mn, mx};
}

inline CellLabel classify_box(const Box& box, const std::vector<HalfSpace>& halfspaces) {
  if (box.empty()) return CellLabel::Outside;
  bool inside = true;
  for (const auto& h : halfspaces) {
    auto [mn, mx] = halfspace_extrema(h, box);
    if (mn > h.offset) return CellLabel::Outside;
    if (!(mx <= h.offset)) inside = false;  // also covers mx = +inf / NaN
  }
  return inside ? CellLabel::Inside : CellLabel::Boundary;
}

// Conservative inner box: cube around c_k with radius delta_k / (2 sqrt(d)),
// clipped to the domain. Always a subset of V_k /\ domain.
inline Box inner_box(const Tessellation& tess, int k, const Box& domain) {
  if (k < 0 || k >= tess.num_cells()) throw ArgumentError("inner_box: cell index out of range");
  if (tess.num_cells() == 1) return domain;
  const int d = tess.dim();
  double delta = kInf;
  for (int j = 0; j < tess.num_cells(); ++j)
    if (j != k)
      delta = std::min(delta, std::sqrt(squared_distance(tess.centroid(k), tess.centroid(j))));
  double r = delta / (2.0 * std::sqrt(static_cast<double>(d)));
  Box b;
  b.lo.resize(d);
  b.hi.resize(d);
  for (int i = 0; i < d; ++i) {
    b.lo[i] = tess.centroid(k)[i] - r;
    b.hi[i] = tess.centroid(k)[i] + r;
  }
  return intersect(b, domain);
}

// Tightest axis-aligned box around V_k /\ domain via 2d small LPs. Pads each
// optimum outward by a hair so sampled members never fall outside due to
// solver round-off. Solver failure degrades to the (valid, loose) domain.
inline Box outer_box(const Tessellation& tess, int k, const Box& domain) {
  if (k < 0 || k >= tess.num_cells()) throw ArgumentError("outer_box: cell index out of range");
  if (!domain.bounded()) throw ArgumentError("outer_box: domain must be bounded");
  if (domain.empty()) return domain;
  if (tess.num_cells() == 1) return domain;
  static constexpr double kPad = 1e-9;
  auto hs = cell_halfspaces(tess, k);
  const int d = tess.dim();
  Box b;
  b.lo.resize(d);
  b.hi.resize(d);
  for (int i = 0; i < d; ++i) {
    LpResult lo = lp_extremum(hs, domain, i, /*maximize=*/false);
    LpResult hi = lp_extremum(hs, domain, i, /*maximize=*/true);
    if (lo.status == LpStatus::Infeasible || hi.status == LpStatus::Infeasible)
      return Box::empty_box(d);
    if (lo.status == LpStatus::Failed || hi.status == LpStatus::Failed) return domain;
    b.lo[i] = std::max(lo.value - kPad, domain.lo[i]);
    b.hi[i] = std::min(hi.value + kPad, domain.hi[i]);
  }
  return b.canonical();
}

// Univariate interval (lo, hi]; lo = -inf and hi = +inf mark the end cells.
struct Interval {
  double lo = kNegInf;
  double hi = kInf;
  bool contains(double x) const { return x > lo && x <= hi; }
};

inline Interval intersect(const Interval& a, const Interval& b) {
  return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

// Voronoi cells of sorted centroids on the line: half-open midpoint intervals
// partitioning R, boundaries assigned to the lower-indexed cell.
inline std::vector<Interval> univariate_cells(const std::vector<double>& sorted_centroids) {
  if (sorted_centroids.empty()) throw ArgumentError("univariate_cells: empty centroid list");
  for (std::size_t i = 0; i + 1 < sorted_centroids.size(); ++i)
    if (!(sorted_centroids[i] < sorted_centroids[i + 1]))
      throw ArgumentError("univariate_cells: centroids must be strictly increasing");
  std::vector<Interval> cells(sorted_centroids.size());
  for (std::size_t i = 0; i < sorted_centroids.size(); ++i) {
    cells[i].lo = (i == 0) ? kNegInf : 0.5 * (sorted_centroids[i - 1] + sorted_centroids[i]);
    cells[i].hi = (i + 1 == sorted_centroids.size())
                      ? kInf
                      : 0.5 * (sorted_centroids[i] + sorted_centroids[i + 1]);
  }
  return cells;
}

// Nearest-centroid cell index on the line for a possibly unsorted list;
// equidistant points resolve to the lowest index.
inline int univariate_cell_of(const std::vector<double>& centroids, double x) {
  int best = 0;
  double bd = std::abs(x - centroids[0]);
  for (std::size_t j = 1; j < centroids.size(); ++j) {
    double dj = std::abs(x - centroids[j]);
    if (dj < bd) {
      bd = dj;
      best = static_cast<int>(j);
    }
  }
  return best;
}

// Cell intervals for a possibly unsorted centroid list, indexed by the
// original centroid order. Ties between equal midpoints follow the
// lowest-index rule via stable sorting.
inline std::vector<Interval> univariate_cells_any_order(const std::vector<double>& centroids) {
  std::vector<std::size_t> order(centroids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return centroids[a] < centroids[b]; });
  std::vector<Interval> cells(centroids.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    Interval iv;
    iv.lo = (r == 0) ? kNegInf : 0.5 * (centroids[order[r - 1]] + centroids[order[r]]);
    iv.hi = (r + 1 == order.size()) ? kInf : 0.5 * (centroids[order[r]] + centroids[order[r + 1]]);
    cells[order[r]] = iv;
  }
  return cells;
}

}  // namespace vpc
