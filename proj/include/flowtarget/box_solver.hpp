#pragma once

// Box-constrained minimization of composite deviation objectives
//
//   f(a) = sum_t w_t * g_t(o_t + c_t * (a_0 + ... + a_{last_t})) + sum_d lin_d * a_d,
//   a in [0,1]^dim,
//
// which covers the idealized-consumption problem of the proxy policy (every
// future epoch's running average depends on a prefix of the idealized
// consumptions), the single-epoch deviation step and the inner minimization
// of the Lagrange dual.
//
// Two methods are provided. `chain` is the default: in prefix-sum coordinates
// S_d = a_0 + ... + a_d the problem separates into one convex function per
// coordinate linked by 0 <= S_d - S_{d-1} <= 1, and a forward pass of nested
// one-dimensional minimizations followed by a clamped backward pass yields an
// exact minimizer (up to bisection resolution). `subgradient` is the plain
// projected subgradient method with staged step halving, kept as an
// independent cross-check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "flowtarget/core.hpp"

namespace flowtarget {

struct BoxTerm {
  double weight = 1.0;
  DeviationCost cost;
  double offset = 0.0;
  double coef = 1.0;  // must be positive
  int last = 0;       // term depends on a_0 + ... + a_last
};

struct BoxObjective {
  int dim = 0;
  std::vector<BoxTerm> terms;
  std::vector<double> linear;  // size dim

  explicit BoxObjective(int d = 0) : dim(d), linear(static_cast<std::size_t>(d), 0.0) {}

  [[nodiscard]] double value(const std::vector<double>& a) const {
    std::vector<double> prefix(static_cast<std::size_t>(dim));
    double s = 0.0;
    for (int d = 0; d < dim; ++d) prefix[static_cast<std::size_t>(d)] = (s += a[static_cast<std::size_t>(d)]);
    double out = 0.0;
    for (const auto& t : terms)
      out += t.weight * t.cost.eval_extended(t.offset + t.coef * prefix[static_cast<std::size_t>(t.last)]);
    for (int d = 0; d < dim; ++d) out += linear[static_cast<std::size_t>(d)] * a[static_cast<std::size_t>(d)];
    return out;
  }

  /// One subgradient (kink convention of DeviationCost).
  [[nodiscard]] std::vector<double> subgradient(const std::vector<double>& a) const {
    std::vector<double> prefix(static_cast<std::size_t>(dim));
    double s = 0.0;
    for (int d = 0; d < dim; ++d) prefix[static_cast<std::size_t>(d)] = (s += a[static_cast<std::size_t>(d)]);
    std::vector<double> g = linear;
    for (const auto& t : terms) {
      const double slope =
          t.weight * t.coef * t.cost.subgrad_extended(t.offset + t.coef * prefix[static_cast<std::size_t>(t.last)]);
      for (int d = 0; d <= t.last; ++d) g[static_cast<std::size_t>(d)] += slope;
    }
    return g;
  }

  void validate() const {
    if (dim < 1) throw DomainError("box objective needs at least one coordinate");
    if (linear.size() != static_cast<std::size_t>(dim)) throw StructuralError("linear part must have dim entries");
    for (const auto& t : terms) {
      if (t.last < 0 || t.last >= dim) throw StructuralError("box term index out of range");
      if (!(t.coef > 0.0)) throw DomainError("box term coefficient must be positive");
      if (!(t.weight >= 0.0)) throw DomainError("box term weight must be nonnegative");
    }
  }
};

enum class BoxMethod { chain, subgradient };

struct BoxSolverOptions {
  BoxMethod method = BoxMethod::chain;
  // subgradient method only
  double initial_step = 0.25;
  int stage_length = 40;
  int max_iterations = 4000;
  double tol = 1e-7;  // stop once the step falls below this
};

struct BoxSolution {
  std::vector<double> point;
  double value = 0.0;
  bool converged = true;
  int iterations = 0;
};

namespace detail {

// Nested one-dimensional functions of the chain method. Level d is
// F_d(s) = h_d(s) + min_{s' in [s-1, s]} F_{d-1}(s') on [0, d+1].
class ChainLevels {
 public:
  explicit ChainLevels(const BoxObjective& f) : f_(f), argmin_(static_cast<std::size_t>(f.dim), 0.0) {
    by_level_.resize(static_cast<std::size_t>(f.dim));
    for (const auto& t : f.terms) by_level_[static_cast<std::size_t>(t.last)].push_back(&t);
  }

  /// Smallest minimizer of every level, computed bottom-up.
  void forward(int& evaluations) {
    for (int d = 0; d < f_.dim; ++d) {
      double lo = 0.0;
      double hi = d + 1.0;
      if (right_derivative(d, lo) >= 0.0) {
        argmin_[static_cast<std::size_t>(d)] = lo;
        ++evaluations;
        continue;
      }
      // No shortcut at hi: a right derivative there would read the level
      // below past the end of its domain. Bisection only probes interior points.
      for (int it = 0; it < 100 && hi - lo > 1e-14; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (right_derivative(d, mid) >= 0.0) {
          hi = mid;
        } else {
          lo = mid;
        }
        ++evaluations;
      }
      argmin_[static_cast<std::size_t>(d)] = hi;
    }
  }

  [[nodiscard]] std::vector<double> backward() const {
    const int D = f_.dim;
    std::vector<double> S(static_cast<std::size_t>(D));
    S[static_cast<std::size_t>(D - 1)] = argmin_[static_cast<std::size_t>(D - 1)];
    for (int d = D - 2; d >= 0; --d) {
      const double next = S[static_cast<std::size_t>(d + 1)];
      S[static_cast<std::size_t>(d)] = std::clamp(argmin_[static_cast<std::size_t>(d)], next - 1.0, next);
    }
    std::vector<double> a(static_cast<std::size_t>(D));
    double prev = 0.0;
    for (int d = 0; d < D; ++d) {
      double v = std::clamp(S[static_cast<std::size_t>(d)] - prev, 0.0, 1.0);
      // Bisection residue near a bound is snapped onto it.
      if (v < 1e-12) v = 0.0;
      if (v > 1.0 - 1e-12) v = 1.0;
      a[static_cast<std::size_t>(d)] = v;
      prev = S[static_cast<std::size_t>(d)];
    }
    return a;
  }

 private:
  // Slope of the linear part in prefix coordinates: sum_d lin_d (S_d - S_{d-1}).
  [[nodiscard]] double linear_slope(int d) const {
    const double next = d + 1 < f_.dim ? f_.linear[static_cast<std::size_t>(d + 1)] : 0.0;
    return f_.linear[static_cast<std::size_t>(d)] - next;
  }

  [[nodiscard]] double h_right(int d, double s) const {
    double out = linear_slope(d);
    for (const BoxTerm* t : by_level_[static_cast<std::size_t>(d)])
      out += t->weight * t->coef * t->cost.right_derivative(t->offset + t->coef * s);
    return out;
  }

  // Right derivative of min_{s' in [s-1,s]} F_{d-1}(s').
  [[nodiscard]] double inner_right(int d, double s) const {
    if (d == 0) return 0.0;
    const double star = argmin_[static_cast<std::size_t>(d - 1)];
    // The sign clamps keep this exact when `star` sits a rounding error past a kink.
    if (s < star) return std::min(right_derivative(d - 1, s), 0.0);
    if (s < star + 1.0) return 0.0;
    return std::max(right_derivative(d - 1, s - 1.0), 0.0);
  }

  [[nodiscard]] double right_derivative(int d, double s) const { return h_right(d, s) + inner_right(d, s); }

  const BoxObjective& f_;
  std::vector<std::vector<const BoxTerm*>> by_level_;
  std::vector<double> argmin_;
};

inline BoxSolution solve_chain(const BoxObjective& f) {
  ChainLevels levels(f);
  BoxSolution out;
  levels.forward(out.iterations);
  out.point = levels.backward();
  out.value = f.value(out.point);
  out.converged = true;
  return out;
}

inline BoxSolution solve_subgradient(const BoxObjective& f, const std::vector<double>& warm, const BoxSolverOptions& opt) {
  const auto D = static_cast<std::size_t>(f.dim);
  std::vector<double> x(D, 0.0);
  if (warm.size() == D)
    for (std::size_t d = 0; d < D; ++d) x[d] = std::clamp(warm[d], 0.0, 1.0);

  BoxSolution best{x, f.value(x), false, 0};
  double step = opt.initial_step;
  int in_stage = 0;
  while (best.iterations < opt.max_iterations) {
    const auto g = f.subgradient(x);
    // Projected-stationarity test: no coordinate can move inside the box.
    double norm2 = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const bool blocked = (x[d] <= 0.0 && g[d] > 0.0) || (x[d] >= 1.0 && g[d] < 0.0);
      if (!blocked) norm2 += g[d] * g[d];
    }
    ++best.iterations;
    if (norm2 == 0.0) {
      best.converged = true;
      break;
    }
    const double scale = step / std::sqrt(norm2);
    for (std::size_t d = 0; d < D; ++d) x[d] = std::clamp(x[d] - scale * g[d], 0.0, 1.0);
    const double v = f.value(x);
    if (v < best.value) {
      best.value = v;
      best.point = x;
    }
    if (++in_stage == opt.stage_length) {
      in_stage = 0;
      step *= 0.5;
      x = best.point;
      if (step < opt.tol) {
        best.converged = true;
        break;
      }
    }
  }
  return best;
}

}  // namespace detail

/// Minimizes `f` over [0,1]^dim. The warm start is used by the subgradient
/// method only; the chain method is exact and returns the smallest minimizer
/// in prefix-sum order, so flat objectives resolve to the zero vector.
inline BoxSolution solve_box_convex(const BoxObjective& f, const std::vector<double>& warm_start = {},
                                    const BoxSolverOptions& opt = {}) {
  f.validate();
  if (opt.method == BoxMethod::chain) return detail::solve_chain(f);
  return detail::solve_subgradient(f, warm_start, opt);
}

}  // namespace flowtarget
