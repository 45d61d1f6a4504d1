#pragma once

#include <cstddef>
#include <vector>

#include "vpc/box.hpp"
#include "vpc/common.hpp"

namespace vpc {

// a . x <= b
struct HalfSpace {
  std::vector<double> normal;
  double offset = 0.0;
};

enum class LpStatus { Optimal, Infeasible, Failed };

struct LpResult {
  LpStatus status = LpStatus::Failed;
  double value = 0.0;
};

namespace detail {

// Dense two-phase full-tableau simplex, minimizing c.x over {Ax = b, x >= 0}
// with b >= 0 on entry. Bland's rule throughout, so no cycling; an iteration
// cap catches numerical stalls. Problems here are tiny (tens of rows).
class SimplexTableau {
 public:
  SimplexTableau(std::vector<std::vector<double>> a, std::vector<double> b)
      : a_(std::move(a)), b_(std::move(b)), m_(a_.size()), n_(a_[0].size()) {}

  // Returns false on iteration-cap failure.
  bool solve_phase(const std::vector<double>& cost, std::vector<std::size_t>& basis,
                   double& objective) {
    static constexpr double kTol = 1e-10;
    static constexpr int kMaxIters = 10000;
    for (int iter = 0; iter < kMaxIters; ++iter) {
      // reduced costs r_j = c_j - c_B . column_j
      std::size_t enter = n_;
      for (std::size_t j = 0; j < n_; ++j) {
        if (blocked_[j]) continue;
        double r = cost[j];
        for (std::size_t i = 0; i < m_; ++i) r -= cost[basis[i]] * a_[i][j];
        if (r < -kTol) {
          enter = j;  // Bland: smallest index
          break;
        }
      }
      if (enter == n_) {
        objective = 0.0;
        for (std::size_t i = 0; i < m_; ++i) objective += cost[basis[i]] * b_[i];
        return true;
      }
      // min-ratio leaving row; Bland tie-break on basis variable index
      std::size_t leave = m_;
      double best_ratio = 0.0;
      for (std::size_t i = 0; i < m_; ++i) {
        if (a_[i][enter] > kTol) {
          double ratio = b_[i] / a_[i][enter];
          if (leave == m_ || ratio < best_ratio - kTol ||
              (ratio < best_ratio + kTol && basis[i] < basis[leave])) {
            leave = i;
            best_ratio = ratio;
          }
        }
      }
      if (leave == m_) {
        // unbounded phase objective; callers bound all variables, so treat as
        // numerical failure
        return false;
      }
      pivot(leave, enter, basis);
    }
    return false;
  }

  void pivot(std::size_t row, std::size_t col, std::vector<std::size_t>& basis) {
    double p = a_[row][col];
    for (std::size_t j = 0; j < n_; ++j) a_[row][j] /= p;
    b_[row] /= p;
    for (std::size_t i = 0; i < m_; ++i) {
      if (i == row) continue;
      double f = a_[i][col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n_; ++j) a_[i][j] -= f * a_[row][j];
      b_[i] -= f * b_[row];
    }
    basis[row] = col;
  }

  void block_column(std::size_t j) { blocked_[j] = true; }
  void init_blocked() { blocked_.assign(n_, false); }

  std::vector<std::vector<double>> a_;
  std::vector<double> b_;
  std::size_t m_, n_;
  std::vector<bool> blocked_;
};

}  // namespace detail

// Exact extremum of x[dim] over {halfspaces} intersected with a finite box.
inline LpResult lp_extremum(const std::vector<HalfSpace>& halfspaces, const Box& bounds, int dim,
                            bool maximize) {
  const int d = bounds.dim();
  if (dim < 0 || dim >= d) throw ArgumentError("lp_extremum: objective dimension out of range");
  if (!bounds.bounded()) throw ArgumentError("lp_extremum: box bounds must be finite");
  if (bounds.empty()) return {LpStatus::Infeasible, 0.0};

  // Shift to y = x - lo >= 0; upper bounds become explicit rows.
  const std::size_t nh = halfspaces.size();
  const std::size_t m = nh + static_cast<std::size_t>(d);
  std::vector<double> rhs(m);
  std::vector<std::vector<double>> rows(m, std::vector<double>(d, 0.0));
  for (std::size_t r = 0; r < nh; ++r) {
    double shift = 0.0;
    for (int i = 0; i < d; ++i) {
      rows[r][i] = halfspaces[r].normal[i];
      shift += halfspaces[r].normal[i] * bounds.lo[i];
    }
    rhs[r] = halfspaces[r].offset - shift;
  }
  for (int i = 0; i < d; ++i) {
    rows[nh + i][i] = 1.0;
    rhs[nh + i] = bounds.hi[i] - bounds.lo[i];
  }

  // Columns: d structural, m slacks, plus one artificial per negative-rhs row.
  std::size_t n_art = 0;
  for (std::size_t r = 0; r < m; ++r)
    if (rhs[r] < 0.0) ++n_art;
  const std::size_t ncols = static_cast<std::size_t>(d) + m + n_art;
  std::vector<std::vector<double>> a(m, std::vector<double>(ncols, 0.0));
  std::vector<double> b(m);
  std::vector<std::size_t> basis(m);
  std::size_t art = static_cast<std::size_t>(d) + m;
  for (std::size_t r = 0; r < m; ++r) {
    double sgn = (rhs[r] < 0.0) ? -1.0 : 1.0;
    for (int i = 0; i < d; ++i) a[r][i] = sgn * rows[r][i];
    a[r][static_cast<std::size_t>(d) + r] = sgn;  // slack
    b[r] = sgn * rhs[r];
    if (rhs[r] < 0.0) {
      a[r][art] = 1.0;
      basis[r] = art++;
    } else {
      basis[r] = static_cast<std::size_t>(d) + r;
    }
  }

  detail::SimplexTableau tab(std::move(a), std::move(b));
  tab.init_blocked();
  double obj = 0.0;
  if (n_art > 0) {
    std::vector<double> c1(ncols, 0.0);
    for (std::size_t j = static_cast<std::size_t>(d) + m; j < ncols; ++j) c1[j] = 1.0;
    if (!tab.solve_phase(c1, basis, obj)) return {LpStatus::Failed, 0.0};
    if (obj > 1e-7) return {LpStatus::Infeasible, 0.0};
    // Drive any degenerate basic artificial out of the basis; a row with no
    // eligible pivot is redundant and stays at zero.
    for (std::size_t r = 0; r < m; ++r) {
      if (basis[r] < static_cast<std::size_t>(d) + m) continue;
      for (std::size_t j = 0; j < static_cast<std::size_t>(d) + m; ++j) {
        if (std::abs(tab.a_[r][j]) > 1e-9) {
          tab.pivot(r, j, basis);
          break;
        }
      }
    }
    for (std::size_t j = static_cast<std::size_t>(d) + m; j < ncols; ++j) tab.block_column(j);
  }
  std::vector<double> c2(ncols, 0.0);
  c2[static_cast<std::size_t>(dim)] = maximize ? -1.0 : 1.0;  // minimize -/+ y_dim
  if (!tab.solve_phase(c2, basis, obj)) return {LpStatus::Failed, 0.0};
  double y_opt = maximize ? -obj : obj;
  return {LpStatus::Optimal, bounds.lo[dim] + y_opt};
}

}  // namespace vpc
