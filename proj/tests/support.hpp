#pragma once

// Hand-rolled generators and independent reference computations shared by
// the unit tests and the acceptance binary. Nothing here calls into the
// library's solvers; the references recompute everything from definitions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "flowtarget/core.hpp"

namespace ftest {

using flowtarget::ArrivalSequence;
using flowtarget::DeviationCost;
using flowtarget::DeviationFamily;
using flowtarget::Instance;
using flowtarget::Matrix;

using Rng = std::mt19937_64;

inline double unif(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline int pick(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

struct Shape {
  int max_m = 3;
  int max_n = 3;
  int max_K = 4;
  std::int64_t max_T = 600;
  bool allow_squared = true;
  bool allow_zero = true;
};

inline DeviationCost random_deviation(Rng& rng, const Shape& s) {
  const double rho = unif(rng, 0.0, 1.0);
  std::vector<int> fams{1, 2};
  if (s.allow_zero) fams.push_back(0);
  if (s.allow_squared) fams.push_back(3);
  switch (fams[static_cast<std::size_t>(pick(rng, 0, static_cast<int>(fams.size()) - 1))]) {
    case 0: return DeviationCost::zero(rho);
    case 1: return DeviationCost::absolute(unif(rng, 0.0, 3.0), rho);
    case 2: return DeviationCost::under_over(unif(rng, 0.0, 3.0), unif(rng, 0.0, 3.0), rho);
    default: return DeviationCost::squared(unif(rng, 0.0, 3.0), rho);
  }
}

/// Random discrete instance; feasible sets are random (possibly empty) subsets.
inline Instance random_instance(Rng& rng, const Shape& s) {
  Instance inst;
  inst.m = pick(rng, 1, s.max_m);
  inst.n = pick(rng, 1, s.max_n);
  inst.K = pick(rng, 1, s.max_K);
  const auto max_L = std::max<std::int64_t>(1, s.max_T / inst.K);
  inst.T = inst.K * static_cast<std::int64_t>(pick(rng, 1, static_cast<int>(max_L)));
  const auto m = static_cast<std::size_t>(inst.m);
  const auto n = static_cast<std::size_t>(inst.n);
  inst.costs = Matrix<double>(n, m);
  for (auto& c : inst.costs.data()) c = unif(rng, -1.0, 1.0);
  inst.feasible_sets.assign(n, {});
  for (auto& fs : inst.feasible_sets)
    for (int i = 0; i < inst.m; ++i)
      if (unif(rng, 0.0, 1.0) < 0.8) fs.push_back(i);
  inst.probs.assign(n, 0.0);
  double total = 0.0;
  for (auto& p : inst.probs) total += (p = unif(rng, 0.05, 1.0));
  for (auto& p : inst.probs) p /= total;
  // Renormalize so the sum is 1 to the last bit.
  double sum = 0.0;
  for (std::size_t j = 0; j + 1 < n; ++j) sum += inst.probs[j];
  inst.probs[n - 1] = 1.0 - sum;
  inst.targets = Matrix<double>(static_cast<std::size_t>(inst.K), m, 0.0);
  inst.dev_costs = Matrix<DeviationCost>(static_cast<std::size_t>(inst.K), m);
  for (int k = 0; k < inst.K; ++k)
    for (int i = 0; i < inst.m; ++i) inst.set_deviation(k, i, random_deviation(rng, s));
  return inst;
}

inline ArrivalSequence random_arrivals(Rng& rng, const Instance& inst) {
  ArrivalSequence omega;
  omega.types.resize(static_cast<std::size_t>(inst.T));
  std::discrete_distribution<int> dist(inst.probs.begin(), inst.probs.end());
  for (auto& j : omega.types) j = dist(rng);
  return omega;
}

/// Uniformly random feasible decision sequence (reject included).
inline std::vector<int> random_decisions(Rng& rng, const Instance& inst, const ArrivalSequence& omega) {
  std::vector<int> out(static_cast<std::size_t>(inst.T));
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (inst.mode == flowtarget::ArrivalMode::continuous) {
      out[t] = pick(rng, -1, inst.m - 1);
      continue;
    }
    const auto& fs = inst.feasible_sets[static_cast<std::size_t>(omega.types[t])];
    const int r = pick(rng, -1, static_cast<int>(fs.size()) - 1);
    out[t] = r < 0 ? -1 : fs[static_cast<std::size_t>(r)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference evaluations
// ---------------------------------------------------------------------------

/// Closed forms written out independently of DeviationCost::eval.
inline double ref_deviation(const DeviationCost& g, double a) {
  const double d = a - g.target();
  switch (g.family()) {
    case DeviationFamily::zero: return 0.0;
    case DeviationFamily::absolute: return g.delta() * std::abs(d);
    case DeviationFamily::under_over: return d > 0.0 ? g.over() * d : -g.under() * d;
    case DeviationFamily::squared: return g.delta() * d * d;
  }
  return std::nan("");
}

/// Total cost of a decision sequence straight from the objective's definition.
inline double ref_total_cost(const Instance& inst, const ArrivalSequence& omega, const std::vector<int>& x) {
  const std::int64_t L = inst.T / inst.K;
  std::vector<double> Z(static_cast<std::size_t>(inst.m), 0.0);
  double v = 0.0;
  for (std::int64_t t = 0; t < inst.T; ++t) {
    const int d = x[static_cast<std::size_t>(t)];
    if (d >= 0) {
      v += inst.mode == flowtarget::ArrivalMode::discrete
               ? inst.costs(static_cast<std::size_t>(omega.types[static_cast<std::size_t>(t)]), static_cast<std::size_t>(d))
               : omega.costs(static_cast<std::size_t>(t), static_cast<std::size_t>(d));
      Z[static_cast<std::size_t>(d)] += 1.0;
    }
    if ((t + 1) % L == 0) {
      const int k = static_cast<int>(t / L);
      const double s = static_cast<double>((k + 1) * L);
      for (int i = 0; i < inst.m; ++i) v += s * ref_deviation(inst.dev_costs(k, i), Z[static_cast<std::size_t>(i)] / s);
    }
  }
  return v;
}

/// Exhaustive integral optimum over every decision sequence.
inline double ref_brute_force(const Instance& inst, const ArrivalSequence& omega) {
  std::vector<int> x(static_cast<std::size_t>(inst.T), -1);
  double best = std::numeric_limits<double>::infinity();
  auto rec = [&](auto&& self, std::size_t t) -> void {
    if (t == x.size()) {
      best = std::min(best, ref_total_cost(inst, omega, x));
      return;
    }
    x[t] = -1;
    self(self, t + 1);
    for (int i : inst.feasible_sets[static_cast<std::size_t>(omega.types[t])]) {
      x[t] = i;
      self(self, t + 1);
    }
  };
  rec(rec, 0);
  return best;
}

// ---------------------------------------------------------------------------
// Grid oracle for composite box objectives
// ---------------------------------------------------------------------------

struct GridTerm {
  double weight;
  DeviationCost g;
  double offset;
  double coef;
  int last;  // prefix a_0..a_last
};

struct GridObjective {
  int dim = 1;
  std::vector<GridTerm> terms;
  std::vector<double> linear;

  [[nodiscard]] double value(const std::vector<double>& a) const {
    double v = 0.0;
    for (int d = 0; d < dim; ++d) v += linear[static_cast<std::size_t>(d)] * a[static_cast<std::size_t>(d)];
    for (const auto& t : terms) {
      double s = 0.0;
      for (int d = 0; d <= t.last; ++d) s += a[static_cast<std::size_t>(d)];
      const double arg = t.offset + t.coef * s;
      const double dv = arg - t.g.target();
      double gv = 0.0;
      switch (t.g.family()) {
        case DeviationFamily::zero: break;
        case DeviationFamily::absolute: gv = t.g.delta() * std::abs(dv); break;
        case DeviationFamily::under_over: gv = dv > 0.0 ? t.g.over() * dv : -t.g.under() * dv; break;
        case DeviationFamily::squared: gv = t.g.delta() * dv * dv; break;
      }
      v += t.weight * gv;
    }
    return v;
  }
};

/// Minimum over [0,1]^dim. One and two dimensions use a full grid with the
/// given step; in three dimensions the two outer coordinates are searched by
/// nested golden sections (the partial minimum of a jointly convex function is
/// convex) and the innermost coordinate on the grid.
inline double grid_minimum(const GridObjective& f, double step = 1e-4) {
  const int N = static_cast<int>(std::lround(1.0 / step));
  std::vector<double> a(static_cast<std::size_t>(f.dim), 0.0);
  auto inner = [&](int d) {
    double best = std::numeric_limits<double>::infinity();
    for (int q = 0; q <= N; ++q) {
      a[static_cast<std::size_t>(d)] = q * step;
      best = std::min(best, f.value(a));
    }
    return best;
  };
  auto golden = [](auto&& fn) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 0.0, hi = 1.0;
    double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
    double f1 = fn(x1), f2 = fn(x2);
    for (int it = 0; it < 40; ++it) {
      if (f1 <= f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - r * (hi - lo);
        f1 = fn(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + r * (hi - lo);
        f2 = fn(x2);
      }
    }
    return std::min({f1, f2, fn(0.0), fn(1.0)});
  };
  if (f.dim == 1) return inner(0);
  if (f.dim == 2) {
    double best = std::numeric_limits<double>::infinity();
    for (int q = 0; q <= N; ++q) {
      a[0] = q * step;
      best = std::min(best, inner(1));
    }
    return best;
  }
  return golden([&](double x0) {
    a[0] = x0;
    return golden([&](double x1) {
      a[0] = x0;
      a[1] = x1;
      return inner(2);
    });
  });
}

/// Random composite objective of the idealized-consumption shape: one term
/// per coordinate d with weight d+1 on the prefix ending at d, plus a few
/// extra random terms and a random linear part.
inline GridObjective random_grid_objective(Rng& rng, int dim) {
  GridObjective f;
  f.dim = dim;
  f.linear.resize(static_cast<std::size_t>(dim));
  for (auto& l : f.linear) l = unif(rng, -3.0, 3.0);
  Shape s;
  for (int d = 0; d < dim; ++d) {
    const double kappa = d + 1.0;
    f.terms.push_back({kappa, random_deviation(rng, s), unif(rng, 0.0, 0.5), 1.0 / kappa, d});
  }
  const int extra = pick(rng, 0, 2);
  for (int e = 0; e < extra; ++e)
    f.terms.push_back({unif(rng, 0.1, 2.0), random_deviation(rng, s), unif(rng, -0.3, 0.3), unif(rng, 0.2, 1.0), pick(rng, 0, dim - 1)});
  return f;
}

}  // namespace ftest
