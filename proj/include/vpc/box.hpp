#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "vpc/common.hpp"

namespace vpc {

// Axis-aligned box with possibly infinite bounds. Any lower > upper marks the
// box empty; canonical() collapses such boxes to a distinguished value so
// integration and refinement can short-circuit.
struct Box {
  std::vector<double> lo, hi;

  Box() = default;
  Box(std::vector<double> l, std::vector<double> h) : lo(std::move(l)), hi(std::move(h)) {}

  static Box whole(int d) {
    return Box(std::vector<double>(d, kNegInf), std::vector<double>(d, kInf));
  }

  static Box empty_box(int d) {
    Box b(std::vector<double>(d, 1.0), std::vector<double>(d, -1.0));
    return b;
  }

  int dim() const { return static_cast<int>(lo.size()); }

  bool empty() const {
    for (int i = 0; i < dim(); ++i)
      if (!(lo[i] <= hi[i])) return true;
    return false;
  }

  bool bounded() const {
    for (int i = 0; i < dim(); ++i)
      if (!std::isfinite(lo[i]) || !std::isfinite(hi[i])) return false;
    return true;
  }

  double side(int i) const { return hi[i] - lo[i]; }

  int longest_dim() const {
    int best = 0;
    for (int i = 1; i < dim(); ++i)
      if (side(i) > side(best)) best = i;
    return best;
  }

  double volume() const {
    if (empty()) return 0.0;
    double v = 1.0;
    for (int i = 0; i < dim(); ++i) v *= side(i);
    return v;
  }

  bool contains(std::span<const double> x, double tol = 0.0) const {
    for (int i = 0; i < dim(); ++i)
      if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
    return true;
  }

  Box canonical() const {
    if (empty()) return empty_box(dim());
    return *this;
  }
};

inline Box intersect(const Box& a, const Box& b) {
  Box r = a;
  for (int i = 0; i < a.dim(); ++i) {
    r.lo[i] = std::max(a.lo[i], b.lo[i]);
    r.hi[i] = std::min(a.hi[i], b.hi[i]);
  }
  return r.canonical();
}

// Midpoint split along `dim`. Midpoints of representable bounds are exact in
// binary floating point, which keeps partition coverage exact.
inline std::pair<Box, Box> bisect_box(const Box& box, int dim) {
  if (dim < 0 || dim >= box.dim()) throw ArgumentError("bisect_box: dimension out of range");
  if (!std::isfinite(box.lo[dim]) || !std::isfinite(box.hi[dim]))
    throw ArgumentError("bisect_box: unbounded dimension");
  if (!(box.lo[dim] < box.hi[dim])) throw ArgumentError("bisect_box: degenerate dimension");
  double mid = 0.5 * (box.lo[dim] + box.hi[dim]);
  Box left = box, right = box;
  left.hi[dim] = mid;
  right.lo[dim] = mid;
  return {left, right};
}

}  // namespace vpc
