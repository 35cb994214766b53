#pragma once

// Small dense two-phase tableau simplex with Bland's anti-cycling rule.
// All variables are nonnegative. Sized for a few thousand columns.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "flowtarget/core.hpp"

namespace flowtarget {

enum class RowSense { le, ge, eq };

struct LpRow {
  std::vector<std::pair<int, double>> coefs;
  RowSense sense = RowSense::le;
  double rhs = 0.0;
};

struct LinearProgram {
  int num_vars = 0;
  std::vector<double> objective;  // minimized
  std::vector<LpRow> rows;

  explicit LinearProgram(int n = 0) : num_vars(n), objective(static_cast<std::size_t>(n), 0.0) {}

  int add_var(double cost) {
    objective.push_back(cost);
    return num_vars++;
  }
  void add_row(LpRow row) { rows.push_back(std::move(row)); }
};

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpResult {
  LpStatus status = LpStatus::optimal;
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
};

class DenseSimplex {
 public:
  explicit DenseSimplex(double tol = 1e-9, int max_iterations = 200000) : tol_(tol), max_iter_(max_iterations) {}

  LpResult solve(const LinearProgram& lp) {
    build(lp);
    LpResult out;

    // Phase 1: minimize the sum of artificials.
    if (num_art_ > 0) {
      std::vector<double> phase1(static_cast<std::size_t>(cols_), 0.0);
      for (int c = art_begin_; c < art_begin_ + num_art_; ++c) phase1[static_cast<std::size_t>(c)] = 1.0;
      set_objective(phase1);
      const auto st = iterate(out.iterations, cols_);
      if (st != LpStatus::optimal) {
        out.status = st == LpStatus::unbounded ? LpStatus::infeasible : st;
        return out;
      }
      if (-obj_row()[static_cast<std::size_t>(cols_)] > 1e-7 * (1.0 + rhs_scale_)) {
        out.status = LpStatus::infeasible;
        return out;
      }
      drive_out_artificials();
    }

    // Phase 2 over structural and slack columns only.
    std::vector<double> phase2(static_cast<std::size_t>(cols_), 0.0);
    for (int c = 0; c < lp.num_vars; ++c) phase2[static_cast<std::size_t>(c)] = lp.objective[static_cast<std::size_t>(c)];
    set_objective(phase2);
    const auto st = iterate(out.iterations, art_begin_);
    out.status = st;
    if (st != LpStatus::optimal) return out;

    out.x.assign(static_cast<std::size_t>(lp.num_vars), 0.0);
    for (int r = 0; r < rows_; ++r) {
      const int b = basis_[static_cast<std::size_t>(r)];
      if (b < lp.num_vars) out.x[static_cast<std::size_t>(b)] = std::max(0.0, at(r, cols_));
    }
    out.value = 0.0;
    for (int c = 0; c < lp.num_vars; ++c) out.value += lp.objective[static_cast<std::size_t>(c)] * out.x[static_cast<std::size_t>(c)];
    return out;
  }

 private:
  double& at(int r, int c) { return tab_[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_ + 1) + static_cast<std::size_t>(c)]; }
  std::span<double> obj_row() {
    return {tab_.data() + static_cast<std::size_t>(rows_) * static_cast<std::size_t>(cols_ + 1), static_cast<std::size_t>(cols_ + 1)};
  }

  void build(const LinearProgram& lp) {
    rows_ = static_cast<int>(lp.rows.size());
    int slacks = 0;
    for (const auto& r : lp.rows)
      if (r.sense != RowSense::eq) ++slacks;
    // A row needs an artificial unless its slack can start basic.
    num_art_ = 0;
    std::vector<int> sign(static_cast<std::size_t>(rows_), 1);
    std::vector<bool> needs_art(static_cast<std::size_t>(rows_), false);
    for (int r = 0; r < rows_; ++r) {
      const auto& row = lp.rows[static_cast<std::size_t>(r)];
      sign[static_cast<std::size_t>(r)] = row.rhs < 0.0 ? -1 : 1;
      const bool slack_basic = (row.sense == RowSense::le && row.rhs >= 0.0) || (row.sense == RowSense::ge && row.rhs <= 0.0);
      needs_art[static_cast<std::size_t>(r)] = !slack_basic;
      if (!slack_basic) ++num_art_;
    }
    art_begin_ = lp.num_vars + slacks;
    cols_ = art_begin_ + num_art_;
    tab_.assign(static_cast<std::size_t>(rows_ + 1) * static_cast<std::size_t>(cols_ + 1), 0.0);
    basis_.assign(static_cast<std::size_t>(rows_), -1);
    rhs_scale_ = 0.0;

    int slack = lp.num_vars;
    int art = art_begin_;
    for (int r = 0; r < rows_; ++r) {
      const auto& row = lp.rows[static_cast<std::size_t>(r)];
      const double s = sign[static_cast<std::size_t>(r)];
      for (const auto& [c, v] : row.coefs) {
        if (c < 0 || c >= lp.num_vars) throw StructuralError("LP coefficient refers to an unknown variable");
        at(r, c) += s * v;
      }
      at(r, cols_) = s * row.rhs;
      rhs_scale_ = std::max(rhs_scale_, std::abs(row.rhs));
      if (row.sense != RowSense::eq) {
        at(r, slack) = s * (row.sense == RowSense::le ? 1.0 : -1.0);
        if (!needs_art[static_cast<std::size_t>(r)]) basis_[static_cast<std::size_t>(r)] = slack;
        ++slack;
      }
      if (needs_art[static_cast<std::size_t>(r)]) {
        at(r, art) = 1.0;
        basis_[static_cast<std::size_t>(r)] = art++;
      }
    }
  }

  void set_objective(const std::vector<double>& cost) {
    auto z = obj_row();
    std::fill(z.begin(), z.end(), 0.0);
    for (int c = 0; c < cols_; ++c) z[static_cast<std::size_t>(c)] = cost[static_cast<std::size_t>(c)];
    for (int r = 0; r < rows_; ++r) {
      const double cb = cost[static_cast<std::size_t>(basis_[static_cast<std::size_t>(r)])];
      if (cb == 0.0) continue;
      for (int c = 0; c <= cols_; ++c) z[static_cast<std::size_t>(c)] -= cb * at(r, c);
    }
  }

  void pivot(int pr, int pc) {
    const double p = at(pr, pc);
    for (int c = 0; c <= cols_; ++c) at(pr, c) /= p;
    at(pr, pc) = 1.0;
    for (int r = 0; r <= rows_; ++r) {
      if (r == pr) continue;
      const double f = at(r, pc);
      if (f == 0.0) continue;
      for (int c = 0; c <= cols_; ++c) at(r, c) -= f * at(pr, c);
      at(r, pc) = 0.0;
    }
    basis_[static_cast<std::size_t>(pr)] = pc;
  }

  // Bland's rule: lowest-index improving column, lowest-index leaving basic variable among ratio ties.
  LpStatus iterate(int& iterations, int col_limit) {
    while (true) {
      if (iterations >= max_iter_) return LpStatus::iteration_limit;
      auto z = obj_row();
      int enter = -1;
      for (int c = 0; c < col_limit; ++c) {
        if (z[static_cast<std::size_t>(c)] < -tol_) {
          enter = c;
          break;
        }
      }
      if (enter < 0) return LpStatus::optimal;
      int leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int r = 0; r < rows_; ++r) {
        const double a = at(r, enter);
        if (a <= tol_) continue;
        const double ratio = at(r, cols_) / a;
        if (ratio < best - tol_ ||
            (ratio <= best + tol_ && basis_[static_cast<std::size_t>(r)] < basis_[static_cast<std::size_t>(leave)])) {
          best = std::min(best, ratio);
          leave = r;
        }
      }
      if (leave < 0) return LpStatus::unbounded;
      pivot(leave, enter);
      ++iterations;
    }
  }

  void drive_out_artificials() {
    for (int r = 0; r < rows_; ++r) {
      if (basis_[static_cast<std::size_t>(r)] < art_begin_) continue;
      for (int c = 0; c < art_begin_; ++c) {
        if (std::abs(at(r, c)) > tol_) {
          pivot(r, c);
          break;
        }
      }
      // A row with no eligible column is redundant; its artificial stays basic at zero.
    }
  }

  double tol_;
  int max_iter_;
  int rows_ = 0;
  int cols_ = 0;
  int art_begin_ = 0;
  int num_art_ = 0;
  double rhs_scale_ = 0.0;
  std::vector<double> tab_;
  std::vector<int> basis_;
};

inline LpResult solve_lp(const LinearProgram& lp, double tol = 1e-9) { return DenseSimplex(tol).solve(lp); }

}  // namespace flowtarget
