#pragma once

// Offline benchmarks.
//
// All three benchmarks (hindsight, myopic, proxy) are instances of one
// program: a contiguous range of epochs [first, last], prior cumulative
// consumption z at the start of `first`, and arrival counts per epoch. Its
// objective is the assignment cost plus s_k * g_ki((z_i + Y_i(first..k)) / s_k)
// for every epoch k in range, s_k = (k+1) T/K. The program is solved as a
// fractional relaxation, either exactly by an epigraph LP (piecewise-linear
// families) or approximately by subgradient ascent on its Lagrange dual with
// a certified duality gap.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "flowtarget/box_solver.hpp"
#include "flowtarget/core.hpp"
#include "flowtarget/lp.hpp"
#include "flowtarget/policies.hpp"

namespace flowtarget {

enum class OracleBackend { exact_lp, dual_subgradient, automatic };

inline const char* backend_name(OracleBackend b) {
  switch (b) {
    case OracleBackend::exact_lp: return "exact-lp";
    case OracleBackend::dual_subgradient: return "dual-subgradient";
    case OracleBackend::automatic: return "auto";
  }
  return "?";
}

inline OracleBackend parse_backend(const std::string& s) {
  if (s == "exact-lp") return OracleBackend::exact_lp;
  if (s == "dual-subgradient") return OracleBackend::dual_subgradient;
  if (s == "auto") return OracleBackend::automatic;
  throw std::invalid_argument("unknown oracle backend '" + s + "'");
}

enum class DualMethod { primal_dual, subgradient };

struct OracleOptions {
  DualMethod dual_method = DualMethod::primal_dual;
  int iterations = 100000;
  double step_scale = 0.0;  // 0 picks a default
  double gap_tol = 1e-7;    // stop once the gap is below gap_tol * max(1, |value|)
  // primal_dual
  int check_every = 50;
  double restart_factor = 0.2;
  int max_restart_length = 2000;
  // subgradient: constant steps within stages, each stage restarting from the
  // best dual point with the step multiplied by step_decay
  int stage_length = 200;
  double step_decay = 0.5;
  int max_lp_vars = 5000;  // automatic backend switches to the dual above this
};

/// Fractional (or, from brute force, integral) offline solution.
struct OfflineSolution {
  std::string backend;
  int first_epoch = 0;
  int last_epoch = 0;
  // Z[j][i][e] for discrete instances, e relative to first_epoch.
  std::vector<double> Z;
  int n = 0;
  int m = 0;
  int epochs = 0;
  Matrix<double> consumption;  // epochs x m, assignments made within each epoch
  double value = 0.0;
  double lower_bound = 0.0;  // equals value for exact backends
  double gap = 0.0;          // certified: value - lower_bound
  int iterations = 0;

  [[nodiscard]] double z(int j, int i, int e) const {
    return Z[(static_cast<std::size_t>(j) * static_cast<std::size_t>(m) + static_cast<std::size_t>(i)) * static_cast<std::size_t>(epochs) +
             static_cast<std::size_t>(e)];
  }
};

// ---------------------------------------------------------------------------
// Problem description
// ---------------------------------------------------------------------------

struct OfflineProblem {
  const Instance* inst = nullptr;
  int first = 0;
  int last = 0;
  std::vector<double> z;             // m, prior consumption
  Matrix<double> counts;             // n x E, discrete arrivals per epoch
  std::vector<Matrix<double>> costs;  // continuous: per epoch, rows are cost vectors

  [[nodiscard]] int epochs() const noexcept { return last - first + 1; }
  [[nodiscard]] double scale(int e) const noexcept {
    return static_cast<double>((first + e + 1) * inst->epoch_length());
  }
};

inline Matrix<double> epoch_counts(const Instance& inst, const ArrivalSequence& omega) {
  Matrix<double> out(static_cast<std::size_t>(inst.n), static_cast<std::size_t>(inst.K), 0.0);
  for (std::int64_t t = 0; t < inst.T; ++t)
    out(static_cast<std::size_t>(omega.types[static_cast<std::size_t>(t)]), static_cast<std::size_t>(inst.epoch_of(t))) += 1.0;
  return out;
}

inline Matrix<double> epoch_costs(const Instance& inst, const ArrivalSequence& omega, int k) {
  const std::int64_t L = inst.epoch_length();
  Matrix<double> out(static_cast<std::size_t>(L), static_cast<std::size_t>(inst.m));
  for (std::int64_t t = 0; t < L; ++t)
    for (int i = 0; i < inst.m; ++i) out(static_cast<std::size_t>(t), static_cast<std::size_t>(i)) = omega.costs(static_cast<std::size_t>(k * L + t), static_cast<std::size_t>(i));
  return out;
}

/// Epochs [first, last]; epoch `source[e]` of omega supplies the arrivals of epoch first+e.
inline OfflineProblem make_problem(const Instance& inst, const ArrivalSequence& omega, int first, int last,
                                   std::vector<double> z, const std::vector<int>& source) {
  inst.validate({.require_equal_epochs = true, .require_unit_targets = false});
  omega.validate(inst);
  if (first < 0 || last >= inst.K || first > last) throw DomainError("epoch range out of bounds");
  if (z.size() != static_cast<std::size_t>(inst.m)) throw StructuralError("prior consumption needs one entry per resource");
  const double elapsed = static_cast<double>(first * inst.epoch_length());
  for (double v : z)
    if (v < 0.0 || v > elapsed + 1e-9) throw DomainError("prior consumption outside [0, elapsed periods]");
  OfflineProblem p;
  p.inst = &inst;
  p.first = first;
  p.last = last;
  p.z = std::move(z);
  if (inst.mode == ArrivalMode::discrete) {
    const auto all = epoch_counts(inst, omega);
    p.counts = Matrix<double>(static_cast<std::size_t>(inst.n), static_cast<std::size_t>(p.epochs()), 0.0);
    for (int j = 0; j < inst.n; ++j)
      for (int e = 0; e < p.epochs(); ++e) p.counts(j, e) = all(j, source[static_cast<std::size_t>(e)]);
  } else {
    for (int e = 0; e < p.epochs(); ++e) p.costs.push_back(epoch_costs(inst, omega, source[static_cast<std::size_t>(e)]));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Exact LP backend
// ---------------------------------------------------------------------------

namespace detail {

// Deviation part of the objective for per-epoch consumption Y (epochs x m).
inline double problem_deviation(const OfflineProblem& p, const Matrix<double>& Y) {
  double out = 0.0;
  for (int i = 0; i < p.inst->m; ++i) {
    double cum = p.z[static_cast<std::size_t>(i)];
    for (int e = 0; e < p.epochs(); ++e) {
      cum += Y(e, i);
      const double s = p.scale(e);
      out += s * p.inst->dev_costs(p.first + e, i).eval_extended(cum / s);
    }
  }
  return out;
}

struct LpLayout {
  // discrete: var index per (j, i, e) or -1
  std::vector<int> var;
  // continuous: first var of each (e, arrival) row, m consecutive vars
  std::vector<std::vector<int>> row_vars;
};

inline OfflineSolution solve_exact_lp(const OfflineProblem& p) {
  const Instance& inst = *p.inst;
  const int E = p.epochs();
  const int m = inst.m;
  for (int e = 0; e < E; ++e)
    for (int i = 0; i < m; ++i)
      if (inst.dev_costs(p.first + e, i).family() == DeviationFamily::squared)
        throw UnsupportedFamily("exact-lp backend cannot represent squared deviation costs");

  LinearProgram lp;
  LpLayout layout;
  // usage[e][i]: (var, coef) pairs adding to Y_ie
  std::vector<std::vector<std::vector<int>>> usage(static_cast<std::size_t>(E), std::vector<std::vector<int>>(static_cast<std::size_t>(m)));
  if (inst.mode == ArrivalMode::discrete) {
    layout.var.assign(static_cast<std::size_t>(inst.n * m * E), -1);
    for (int j = 0; j < inst.n; ++j) {
      for (int e = 0; e < E; ++e) {
        const double cnt = p.counts(j, e);
        if (cnt <= 0.0) continue;
        LpRow supply;
        supply.sense = RowSense::le;
        supply.rhs = cnt;
        for (int i : inst.feasible_sets[static_cast<std::size_t>(j)]) {
          const int v = lp.add_var(inst.costs(j, i));
          layout.var[static_cast<std::size_t>((j * m + i) * E + e)] = v;
          usage[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)].push_back(v);
          supply.coefs.emplace_back(v, 1.0);
        }
        if (!supply.coefs.empty()) lp.add_row(std::move(supply));
      }
    }
  } else {
    for (int e = 0; e < E; ++e) {
      const auto& C = p.costs[static_cast<std::size_t>(e)];
      for (std::size_t r = 0; r < C.rows(); ++r) {
        LpRow one;
        one.rhs = 1.0;
        std::vector<int> vars;
        for (int i = 0; i < m; ++i) {
          const int v = lp.add_var(C(r, static_cast<std::size_t>(i)));
          vars.push_back(v);
          usage[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)].push_back(v);
          one.coefs.emplace_back(v, 1.0);
        }
        layout.row_vars.push_back(std::move(vars));
        lp.add_row(std::move(one));
      }
    }
  }

  // Epigraph: e_ki >= over*(z + Y - rho s) and e_ki >= under*(rho s - z - Y).
  for (int e = 0; e < E; ++e) {
    const double s = p.scale(e);
    for (int i = 0; i < m; ++i) {
      const auto& g = inst.dev_costs(p.first + e, i);
      if (g.family() == DeviationFamily::zero || (g.over() == 0.0 && g.under() == 0.0)) continue;
      const int epi = lp.add_var(1.0);
      const double base = g.target() * s - p.z[static_cast<std::size_t>(i)];
      auto cumulative = [&](double coef) {
        std::vector<std::pair<int, double>> out;
        for (int ep = 0; ep <= e; ++ep)
          for (int v : usage[static_cast<std::size_t>(ep)][static_cast<std::size_t>(i)]) out.emplace_back(v, coef);
        return out;
      };
      if (g.over() > 0.0) {
        LpRow r{cumulative(g.over()), RowSense::le, g.over() * base};
        r.coefs.emplace_back(epi, -1.0);
        lp.add_row(std::move(r));
      }
      if (g.under() > 0.0) {
        LpRow r{cumulative(-g.under()), RowSense::le, -g.under() * base};
        r.coefs.emplace_back(epi, -1.0);
        lp.add_row(std::move(r));
      }
    }
  }

  const auto res = solve_lp(lp);
  if (res.status != LpStatus::optimal)
    throw std::logic_error("offline LP not solved to optimality (reject is always feasible)");

  OfflineSolution out;
  out.backend = backend_name(OracleBackend::exact_lp);
  out.first_epoch = p.first;
  out.last_epoch = p.last;
  out.m = m;
  out.n = inst.n;
  out.epochs = E;
  out.iterations = res.iterations;
  out.consumption = Matrix<double>(static_cast<std::size_t>(E), static_cast<std::size_t>(m), 0.0);
  if (inst.mode == ArrivalMode::discrete) {
    out.Z.assign(static_cast<std::size_t>(inst.n * m * E), 0.0);
    for (std::size_t idx = 0; idx < layout.var.size(); ++idx)
      if (layout.var[idx] >= 0) out.Z[idx] = res.x[static_cast<std::size_t>(layout.var[idx])];
  }
  for (int e = 0; e < E; ++e)
    for (int i = 0; i < m; ++i)
      for (int v : usage[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)]) out.consumption(e, i) += res.x[static_cast<std::size_t>(v)];
  // The objective is re-evaluated from the assignment; at an LP optimum the
  // epigraph variables are tight, so this agrees with the LP value.
  double assign = 0.0;
  for (std::size_t idx = 0; idx < layout.var.size(); ++idx)
    if (layout.var[idx] >= 0) assign += lp.objective[static_cast<std::size_t>(layout.var[idx])] * res.x[static_cast<std::size_t>(layout.var[idx])];
  for (const auto& vars : layout.row_vars)
    for (int v : vars) assign += lp.objective[static_cast<std::size_t>(v)] * res.x[static_cast<std::size_t>(v)];
  out.value = assign + problem_deviation(p, out.consumption);
  out.lower_bound = out.value;
  out.gap = 0.0;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dual subgradient backend
// ---------------------------------------------------------------------------

namespace detail {

// min over [0,1] of phi(a) = g(a) + price*a: the box solver's point and a
// certified lower bound from one-sided derivatives at that point.
struct InnerMin {
  double point = 0.0;
  double lower = 0.0;
};

inline InnerMin inner_min(const DeviationCost& g, double price) {
  BoxObjective f(1);
  f.linear[0] = price;
  if (g.family() != DeviationFamily::zero) f.terms.push_back(BoxTerm{1.0, g, 0.0, 1.0, 0});
  const auto sol = solve_box_convex(f);
  // Bisection stops a hair away from a kink, where the one-sided derivatives
  // would make the certificate loose; the kink itself is always a candidate.
  double a = sol.point[0];
  double value = g.eval_extended(a) + price * a;
  for (double c : {0.0, 1.0, std::clamp(g.target(), 0.0, 1.0)}) {
    const double v = g.eval_extended(c) + price * c;
    if (v <= value) {
      value = v;
      a = c;
    }
  }
  const double right = g.right_derivative(a) + price;
  const double left = g.left_derivative(a) + price;
  return {a, value + std::min({0.0, right * (1.0 - a), -left * a})};
}

// Lagrange dual function at mu (epochs x m) together with the minimizing
// assignment of its inner problem and a supergradient divided by s.
struct DualEval {
  double value = 0.0;
  std::vector<double> Z;  // discrete: integral minimizer
  Matrix<double> Y;       // per-epoch consumption of that minimizer
  double cont_assign = 0.0;
  Matrix<double> grad;
};

inline void lagrange_dual(const OfflineProblem& p, const Matrix<double>& mu, DualEval& out) {
  const Instance& inst = *p.inst;
  const int E = p.epochs();
  const auto m = static_cast<std::size_t>(inst.m);
  const auto Ez = static_cast<std::size_t>(E);
  const bool discrete = inst.mode == ArrivalMode::discrete;
  const auto n = static_cast<std::size_t>(discrete ? inst.n : 0);
  Matrix<double> price(Ez, m, 0.0);
  // Price seen by an arrival in epoch e: sum of duals of epochs >= e.
  for (int e = E - 1; e >= 0; --e)
    for (std::size_t i = 0; i < m; ++i) price(e, i) = mu(e, i) + (e + 1 < E ? price(e + 1, i) : 0.0);
  out.value = 0.0;
  out.cont_assign = 0.0;
  out.Y = Matrix<double>(Ez, m, 0.0);
  out.grad = Matrix<double>(Ez, m, 0.0);
  out.Z.assign(n * m * Ez, 0.0);
  if (discrete) {
    for (std::size_t j = 0; j < n; ++j) {
      for (int e = 0; e < E; ++e) {
        const double cnt = p.counts(j, e);
        if (cnt <= 0.0) continue;
        const int best = proxy_assign(inst.costs.row(j), inst.feasible_sets[j], price.row(static_cast<std::size_t>(e)));
        if (best < 0) continue;
        const auto bi = static_cast<std::size_t>(best);
        out.value += cnt * (inst.costs(j, bi) - price(e, bi));
        out.Z[(j * m + bi) * Ez + static_cast<std::size_t>(e)] = cnt;
        out.Y(e, bi) += cnt;
      }
    }
  } else {
    const auto all = iota_resources(inst.m);
    for (int e = 0; e < E; ++e) {
      const auto& C = p.costs[static_cast<std::size_t>(e)];
      for (std::size_t r = 0; r < C.rows(); ++r) {
        const int best = proxy_assign(C.row(r), all, price.row(static_cast<std::size_t>(e)));
        if (best < 0) continue;
        const auto bi = static_cast<std::size_t>(best);
        out.value += C(r, bi) - price(e, bi);
        out.cont_assign += C(r, bi);
        out.Y(e, bi) += 1.0;
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    double cum = p.z[i];
    for (int e = 0; e < E; ++e) {
      const double s = p.scale(e);
      cum += out.Y(e, i);
      const auto inner = inner_min(inst.dev_costs(p.first + e, static_cast<int>(i)), mu(e, i));
      out.value += s * inner.lower - mu(e, i) * p.z[i];
      out.grad(e, i) = inner.point - cum / s;
    }
  }
}

// Best feasible primal and best dual bound seen so far.
struct Incumbent {
  const OfflineProblem* p = nullptr;
  OfflineSolution sol;
  double best_dual = -std::numeric_limits<double>::infinity();

  explicit Incumbent(const OfflineProblem& prob) : p(&prob) { sol.value = std::numeric_limits<double>::infinity(); }

  double primal_value(const std::vector<double>& Z, const Matrix<double>& Y, double cont_assign) const {
    const Instance& inst = *p->inst;
    double v = cont_assign;
    if (inst.mode == ArrivalMode::discrete) {
      const auto m = static_cast<std::size_t>(inst.m);
      const auto Ez = static_cast<std::size_t>(p->epochs());
      for (std::size_t j = 0; j < static_cast<std::size_t>(inst.n); ++j)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t e = 0; e < Ez; ++e) v += inst.costs(j, i) * Z[(j * m + i) * Ez + e];
    }
    return v + problem_deviation(*p, Y);
  }
  double offer(const std::vector<double>& Z, const Matrix<double>& Y, double cont_assign) {
    const double v = primal_value(Z, Y, cont_assign);
    if (v < sol.value) {
      sol.value = v;
      sol.Z = Z;
      sol.consumption = Y;
    }
    return v;
  }
  void offer_dual(double d) { best_dual = std::max(best_dual, d); }
  [[nodiscard]] double gap() const { return sol.value - best_dual; }
  [[nodiscard]] bool certified(double tol) const { return gap() <= tol * std::max(1.0, std::abs(sol.value)); }

  OfflineSolution finish(int iterations) {
    const Instance& inst = *p->inst;
    sol.backend = backend_name(OracleBackend::dual_subgradient);
    sol.first_epoch = p->first;
    sol.last_epoch = p->last;
    sol.m = inst.m;
    sol.n = inst.mode == ArrivalMode::discrete ? inst.n : 0;
    sol.epochs = p->epochs();
    sol.iterations = iterations;
    sol.lower_bound = best_dual;
    sol.gap = std::max(0.0, sol.value - best_dual);
    return sol;
  }
};

inline double default_step(const OfflineProblem& p) {
  double cmax = p.inst->c_max();
  for (const auto& C : p.costs)
    for (double c : C.data()) cmax = std::max(cmax, std::abs(c));
  return 0.5 * std::max({cmax, p.inst->lipschitz_max(), 1e-3});
}

// Subgradient ascent on the dual with constant steps inside stages; every
// stage restarts from the best dual point with a smaller step and offers its
// averaged assignment as a primal candidate.
inline OfflineSolution solve_dual_staged(const OfflineProblem& p, const OracleOptions& opt) {
  const auto Ez = static_cast<std::size_t>(p.epochs());
  const auto m = static_cast<std::size_t>(p.inst->m);
  double step = opt.step_scale > 0.0 ? opt.step_scale : default_step(p);
  Incumbent inc(p);
  Matrix<double> mu(Ez, m, 0.0);
  Matrix<double> mu_best = mu;
  DualEval ev;
  std::vector<double> Zavg;
  Matrix<double> Yavg(Ez, m, 0.0);
  double cont_avg = 0.0;
  int averaged = 0;
  int in_stage = 0;
  int it = 0;
  for (; it < opt.iterations; ++it) {
    lagrange_dual(p, mu, ev);
    if (ev.value > inc.best_dual) mu_best = mu;
    inc.offer_dual(ev.value);
    inc.offer(ev.Z, ev.Y, ev.cont_assign);
    if (averaged == 0) {
      Zavg.assign(ev.Z.size(), 0.0);
      Yavg = Matrix<double>(Ez, m, 0.0);
      cont_avg = 0.0;
    }
    const double w = 1.0 / ++averaged;
    for (std::size_t q = 0; q < Zavg.size(); ++q) Zavg[q] += w * (ev.Z[q] - Zavg[q]);
    for (std::size_t q = 0; q < Yavg.data().size(); ++q) Yavg.data()[q] += w * (ev.Y.data()[q] - Yavg.data()[q]);
    cont_avg += w * (ev.cont_assign - cont_avg);
    if (++in_stage == opt.stage_length) {
      inc.offer(Zavg, Yavg, cont_avg);
      if (inc.certified(opt.gap_tol)) {
        ++it;
        break;
      }
      in_stage = 0;
      averaged = 0;
      mu = mu_best;
      step *= opt.step_decay;
      continue;
    }
    for (std::size_t q = 0; q < mu.data().size(); ++q) mu.data()[q] += step * ev.grad.data()[q];
  }
  if (averaged > 0) inc.offer(Zavg, Yavg, cont_avg);
  return inc.finish(it);
}

// Euclidean projection onto {x >= 0, sum x <= cap} restricted to `idx`.
inline void project_capped(std::vector<double>& x, std::span<const std::size_t> idx, double cap) {
  double total = 0.0;
  for (auto q : idx) total += (x[q] = std::max(0.0, x[q]));
  if (total <= cap) return;
  // Project onto the face sum x = cap.
  std::vector<double> u;
  u.reserve(idx.size());
  for (auto q : idx) u.push_back(x[q]);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (std::size_t r = 0; r < u.size(); ++r) {
    cum += u[r];
    const double t = (cum - cap) / static_cast<double>(r + 1);
    if (u[r] - t > 0.0) theta = t;
  }
  for (auto q : idx) x[q] = std::max(0.0, x[q] - theta);
}

// Primal-dual hybrid gradient on the saddle function
//   sum c Z + sum_e,i s_e g(a_ei) + sum_e,i mu_ei (s_e a_ei - z_i - cum_ei(Z))
// with diagonal preconditioning and restarts to the running average. Primal
// iterates stay feasible; the certificate is the exact dual function value.
inline OfflineSolution solve_dual_pdhg(const OfflineProblem& p, const OracleOptions& opt) {
  const Instance& inst = *p.inst;
  const int E = p.epochs();
  const auto Ez = static_cast<std::size_t>(E);
  const auto m = static_cast<std::size_t>(inst.m);
  const bool discrete = inst.mode == ArrivalMode::discrete;

  // Assignment variables grouped into blocks sharing one capacity: (type, epoch)
  // pairs in discrete mode, single arrivals in continuous mode.
  struct Block {
    int epoch;
    double cap;
    std::vector<std::size_t> vars;
  };
  std::vector<Block> blocks;
  std::vector<double> cost;      // per variable
  std::vector<std::size_t> res;  // resource of each variable
  if (discrete) {
    const auto n = static_cast<std::size_t>(inst.n);
    cost.assign(n * m * Ez, 0.0);
    res.assign(cost.size(), 0);
    for (std::size_t j = 0; j < n; ++j)
      for (int e = 0; e < E; ++e) {
        Block b{e, p.counts(j, e), {}};
        for (int i : inst.feasible_sets[j]) {
          const std::size_t q = (j * m + static_cast<std::size_t>(i)) * Ez + static_cast<std::size_t>(e);
          cost[q] = inst.costs(j, static_cast<std::size_t>(i));
          res[q] = static_cast<std::size_t>(i);
          b.vars.push_back(q);
        }
        if (b.cap > 0.0 && !b.vars.empty()) blocks.push_back(std::move(b));
      }
  } else {
    for (int e = 0; e < E; ++e) {
      const auto& C = p.costs[static_cast<std::size_t>(e)];
      for (std::size_t r = 0; r < C.rows(); ++r) {
        Block b{e, 1.0, {}};
        for (std::size_t i = 0; i < m; ++i) {
          b.vars.push_back(cost.size());
          cost.push_back(C(r, i));
          res.push_back(i);
        }
        blocks.push_back(std::move(b));
      }
    }
  }
  const std::size_t nv = cost.size();

  // Diagonal step sizes from the absolute row and column sums of the coupling.
  Matrix<double> row_sum(Ez, m, 0.0);
  Matrix<double> vars_in_epoch(Ez, m, 0.0);
  for (const auto& b : blocks)
    for (auto q : b.vars) vars_in_epoch(static_cast<std::size_t>(b.epoch), res[q]) += 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int e = 0; e < E; ++e) {
      acc += vars_in_epoch(e, i);
      row_sum(e, i) = p.scale(e) + acc;
    }
  }
  std::vector<double> tau_z(nv, 0.0);
  for (const auto& b : blocks)
    for (auto q : b.vars) tau_z[q] = 1.0 / static_cast<double>(E - b.epoch);
  Matrix<double> tau_a(Ez, m, 0.0);
  Matrix<double> sigma(Ez, m, 0.0);
  for (int e = 0; e < E; ++e)
    for (std::size_t i = 0; i < m; ++i) {
      tau_a(e, i) = 1.0 / p.scale(e);
      sigma(e, i) = 1.0 / row_sum(e, i);
    }
  // Balance primal and dual step lengths (tau * sigma is what must stay bounded).
  const double omega = opt.step_scale > 0.0 ? opt.step_scale : 1.0;

  std::vector<double> Z(nv, 0.0), Zn(nv, 0.0), Zavg(nv, 0.0);
  Matrix<double> a(Ez, m, 0.0), an(Ez, m, 0.0), aavg(Ez, m, 0.0);
  Matrix<double> mu(Ez, m, 0.0), muavg(Ez, m, 0.0);
  Matrix<double> price(Ez, m, 0.0);
  Matrix<double> Ybar(Ez, m, 0.0);
  int averaged = 0;

  Incumbent inc(p);
  DualEval ev;
  auto consumption = [&](const std::vector<double>& X) {
    Matrix<double> Y(Ez, m, 0.0);
    for (const auto& b : blocks)
      for (auto q : b.vars) Y(static_cast<std::size_t>(b.epoch), res[q]) += X[q];
    return Y;
  };
  auto to_solution = [&](const std::vector<double>& X) {
    // Discrete solutions are reported as Z[j][i][e]; continuous ones only via Y.
    return discrete ? X : std::vector<double>{};
  };
  auto cont_cost = [&](const std::vector<double>& X) {
    if (discrete) return 0.0;
    double v = 0.0;
    for (std::size_t q = 0; q < nv; ++q) v += cost[q] * X[q];
    return v;
  };
  // Evaluates a primal/dual pair; returns its own gap.
  auto check = [&](const std::vector<double>& X, const Matrix<double>& dual_point) {
    const double pv = inc.offer(to_solution(X), consumption(X), cont_cost(X));
    lagrange_dual(p, dual_point, ev);
    inc.offer_dual(ev.value);
    return pv - ev.value;
  };

  double restart_gap = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < opt.iterations; ++it) {
    for (int e = E - 1; e >= 0; --e)
      for (std::size_t i = 0; i < m; ++i) price(e, i) = mu(e, i) + (e + 1 < E ? price(e + 1, i) : 0.0);
    for (const auto& b : blocks) {
      for (auto q : b.vars) Zn[q] = Z[q] - omega * tau_z[q] * (cost[q] - price(static_cast<std::size_t>(b.epoch), res[q]));
      project_capped(Zn, b.vars, b.cap);
    }
    for (int e = 0; e < E; ++e)
      for (std::size_t i = 0; i < m; ++i) {
        const double s = p.scale(e);
        const double t = omega * tau_a(e, i);
        an(e, i) = inst.dev_costs(p.first + e, static_cast<int>(i)).prox(a(e, i) - t * s * mu(e, i), t * s);
      }
    std::fill(Ybar.data().begin(), Ybar.data().end(), 0.0);
    for (const auto& b : blocks)
      for (auto q : b.vars) Ybar(static_cast<std::size_t>(b.epoch), res[q]) += 2.0 * Zn[q] - Z[q];
    for (std::size_t i = 0; i < m; ++i) {
      double cum = p.z[i];
      for (int e = 0; e < E; ++e) {
        cum += Ybar(e, i);
        const double abar = 2.0 * an(e, i) - a(e, i);
        mu(e, i) += sigma(e, i) / omega * (p.scale(e) * abar - cum);
      }
    }
    Z.swap(Zn);
    std::swap(a, an);

    const double w = 1.0 / ++averaged;
    for (std::size_t q = 0; q < nv; ++q) Zavg[q] += w * (Z[q] - Zavg[q]);
    for (std::size_t q = 0; q < a.data().size(); ++q) {
      aavg.data()[q] += w * (a.data()[q] - aavg.data()[q]);
      muavg.data()[q] += w * (mu.data()[q] - muavg.data()[q]);
    }

    if ((it + 1) % opt.check_every == 0) {
      const double gap_cur = check(Z, mu);
      const double gap_avg = check(Zavg, muavg);
      if (inc.certified(opt.gap_tol)) {
        ++it;
        break;
      }
      // Restart once the candidate gap has shrunk enough since the last restart.
      const double cand = std::min(gap_cur, gap_avg);
      if (cand <= opt.restart_factor * restart_gap || averaged >= opt.max_restart_length) {
        if (gap_avg < gap_cur) {
          Z = Zavg;
          a = aavg;
          mu = muavg;
        }
        restart_gap = cand;
        averaged = 0;
        std::fill(Zavg.begin(), Zavg.end(), 0.0);
        std::fill(aavg.data().begin(), aavg.data().end(), 0.0);
        std::fill(muavg.data().begin(), muavg.data().end(), 0.0);
      }
    }
  }
  check(Z, mu);
  if (averaged > 0) check(Zavg, muavg);
  return inc.finish(it);
}

inline OfflineSolution solve_dual_subgradient(const OfflineProblem& p, const OracleOptions& opt) {
  return opt.dual_method == DualMethod::primal_dual ? solve_dual_pdhg(p, opt) : solve_dual_staged(p, opt);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public benchmarks
// ---------------------------------------------------------------------------

inline OfflineSolution solve_offline(const OfflineProblem& p, OracleBackend backend, const OracleOptions& opt = {}) {
  if (backend == OracleBackend::automatic) {
    bool squared = false;
    for (int e = 0; e < p.epochs(); ++e)
      for (int i = 0; i < p.inst->m; ++i)
        squared = squared || p.inst->dev_costs(p.first + e, i).family() == DeviationFamily::squared;
    std::int64_t vars = 0;
    if (p.inst->mode == ArrivalMode::discrete) {
      vars = static_cast<std::int64_t>(p.inst->n) * p.inst->m * p.epochs();
    } else {
      vars = static_cast<std::int64_t>(p.epochs()) * p.inst->epoch_length() * p.inst->m;
    }
    backend = (!squared && vars <= opt.max_lp_vars) ? OracleBackend::exact_lp : OracleBackend::dual_subgradient;
  }
  if (backend == OracleBackend::exact_lp) return detail::solve_exact_lp(p);
  return detail::solve_dual_subgradient(p, opt);
}

/// Hindsight optimum over the whole horizon.
inline OfflineSolution hindsight_optimum(const Instance& inst, const ArrivalSequence& omega,
                                         OracleBackend backend = OracleBackend::exact_lp, const OracleOptions& opt = {}) {
  std::vector<int> source(static_cast<std::size_t>(inst.K));
  for (int k = 0; k < inst.K; ++k) source[static_cast<std::size_t>(k)] = k;
  return solve_offline(make_problem(inst, omega, 0, inst.K - 1, std::vector<double>(static_cast<std::size_t>(inst.m), 0.0), source),
                       backend, opt);
}

/// Myopic offline optimum of epoch k (0-based) given prior consumption z.
inline OfflineSolution myopic_offline(const Instance& inst, const ArrivalSequence& omega, const std::vector<double>& z, int k,
                                      OracleBackend backend = OracleBackend::exact_lp, const OracleOptions& opt = {}) {
  return solve_offline(make_problem(inst, omega, k, k, z, {k}), backend, opt);
}

/// Proxy offline optimum of epoch k: epochs k..K-1, each receiving epoch k's arrivals.
inline OfflineSolution proxy_offline(const Instance& inst, const ArrivalSequence& omega, const std::vector<double>& z, int k,
                                     OracleBackend backend = OracleBackend::exact_lp, const OracleOptions& opt = {}) {
  std::vector<int> source(static_cast<std::size_t>(inst.K - k), k);
  return solve_offline(make_problem(inst, omega, k, inst.K - 1, z, source), backend, opt);
}

// ---------------------------------------------------------------------------
// Brute force
// ---------------------------------------------------------------------------

inline constexpr double kBruteForceLimit = 1e7;

/// Exact integral optimum by enumerating every decision sequence.
inline OfflineSolution brute_force_offline(const Instance& inst, const ArrivalSequence& omega) {
  inst.validate({.require_equal_epochs = true, .require_unit_targets = false});
  omega.validate(inst);
  const double size = std::pow(inst.m + 1.0, static_cast<double>(inst.T));
  if (size > kBruteForceLimit)
    throw DomainError("brute force refused: (m+1)^T = " + std::to_string(size) + " exceeds 1e7");

  const auto all = iota_resources(inst.m);
  const std::int64_t L = inst.epoch_length();
  const auto m = static_cast<std::size_t>(inst.m);
  std::vector<std::int64_t> cum(m, 0);
  std::vector<int> path(static_cast<std::size_t>(inst.T), -1);
  std::vector<int> best_path;
  double best = std::numeric_limits<double>::infinity();

  // Depth-first over periods; deviation is charged when an epoch closes.
  auto dfs = [&](auto&& self, std::int64_t t, double acc) -> void {
    if (t == inst.T) {
      if (acc < best) {
        best = acc;
        best_path = path;
      }
      return;
    }
    const auto view = arrival_at(inst, omega, t, all);
    auto visit = [&](int d) {
      double next = acc;
      if (d >= 0) {
        next += view.costs[static_cast<std::size_t>(d)];
        ++cum[static_cast<std::size_t>(d)];
      }
      path[static_cast<std::size_t>(t)] = d;
      if ((t + 1) % L == 0) next += epoch_deviation_cost(inst, inst.epoch_of(t), cum);
      self(self, t + 1, next);
      if (d >= 0) --cum[static_cast<std::size_t>(d)];
    };
    visit(-1);
    for (int i : view.feasible) visit(i);
  };
  dfs(dfs, 0, 0.0);

  const auto state = replay(inst, omega, best_path);
  OfflineSolution out;
  out.backend = "brute-force";
  out.first_epoch = 0;
  out.last_epoch = inst.K - 1;
  out.m = inst.m;
  out.n = inst.n;
  out.epochs = inst.K;
  out.consumption = Matrix<double>(static_cast<std::size_t>(inst.K), m, 0.0);
  if (inst.mode == ArrivalMode::discrete) out.Z.assign(static_cast<std::size_t>(inst.n) * m * static_cast<std::size_t>(inst.K), 0.0);
  for (std::int64_t t = 0; t < inst.T; ++t) {
    const int d = best_path[static_cast<std::size_t>(t)];
    if (d < 0) continue;
    const int k = inst.epoch_of(t);
    out.consumption(k, d) += 1.0;
    if (inst.mode == ArrivalMode::discrete) {
      const auto j = static_cast<std::size_t>(omega.types[static_cast<std::size_t>(t)]);
      out.Z[(j * m + static_cast<std::size_t>(d)) * static_cast<std::size_t>(inst.K) + static_cast<std::size_t>(k)] += 1.0;
    }
  }
  out.value = total_cost(inst, state).total;
  out.lower_bound = out.value;
  return out;
}

/// Worst-case loss from rounding a fractional offline solution down to an
/// integral one: one unit per (type, resource, epoch) of assignment cost, and
/// the induced running-average shift priced at each deviation cost's
/// Lipschitz constant.
inline double rounding_bound(const Instance& inst) {
  const double n = inst.mode == ArrivalMode::discrete ? inst.n : 1.0;
  double out = inst.c_max() * n * inst.m * inst.K;
  for (int k = 0; k < inst.K; ++k)
    for (int i = 0; i < inst.m; ++i) out += inst.dev_costs(k, i).lipschitz() * n * (k + 1);
  return out;
}

// ---------------------------------------------------------------------------
// Proxy costs
// ---------------------------------------------------------------------------

namespace detail {

inline void require_proxies(const Instance& inst, const RunResult& run) {
  if (!run.has_proxies() || run.proxy_offset.size() != static_cast<std::size_t>(inst.T))
    throw StructuralError("run has no recorded proxy decisions");
  if (run.state.epochs_closed != inst.K) throw StructuralError("run is missing epoch-end snapshots");
}

// Proxy counts made during epoch k: counts(k', i) = number of periods of
// epoch k whose proxy for epoch k' is resource i; assignment cost per k'.
struct ProxyCounts {
  Matrix<double> counts;      // K x m
  std::vector<double> costs;  // K
};

inline ProxyCounts proxy_counts(const Instance& inst, const ArrivalSequence& omega, const RunResult& run, int k) {
  ProxyCounts out{Matrix<double>(static_cast<std::size_t>(inst.K), static_cast<std::size_t>(inst.m), 0.0),
                  std::vector<double>(static_cast<std::size_t>(inst.K), 0.0)};
  const auto all = iota_resources(inst.m);
  const std::int64_t L = inst.epoch_length();
  for (std::int64_t t = k * L; t < (k + 1) * L; ++t) {
    const auto view = arrival_at(inst, omega, t, all);
    for (int kp = k; kp < inst.K; ++kp) {
      const int d = run.proxy_decision(inst, t, kp);
      if (d < 0) continue;
      out.counts(kp, d) += 1.0;
      out.costs[static_cast<std::size_t>(kp)] += view.costs[static_cast<std::size_t>(d)];
    }
  }
  return out;
}

}  // namespace detail

/// Cumulative proxy cost of epoch k (0-based): assignment cost of every proxy
/// decision made during epoch k plus, for each k' >= k, the deviation cost the
/// proxies for epochs k..k' would produce on top of the consumption at the
/// start of epoch k.
inline double cumulative_proxy_cost(const Instance& inst, const ArrivalSequence& omega, const RunResult& run, int k) {
  detail::require_proxies(inst, run);
  const auto pc = detail::proxy_counts(inst, omega, run, k);
  double out = 0.0;
  for (int kp = k; kp < inst.K; ++kp) out += pc.costs[static_cast<std::size_t>(kp)];
  const std::int64_t L = inst.epoch_length();
  for (int i = 0; i < inst.m; ++i) {
    double cum = k > 0 ? static_cast<double>(run.state.snapshots(k - 1, i)) : 0.0;
    for (int kp = k; kp < inst.K; ++kp) {
      cum += pc.counts(kp, i);
      const double s = static_cast<double>((kp + 1) * L);
      out += s * inst.dev_costs(kp, i).eval(cum / s);
    }
  }
  return out;
}

/// Terms of the exact decomposition of a proxy policy's total cost into its
/// cumulative proxy costs minus the cost of never-implemented proxies.
struct ProxyDecomposition {
  double proxy_costs = 0.0;           // sum over epochs of cumulative proxy cost
  double unimplemented_assign = 0.0;  // proxies for later epochs, assignment part
  double unimplemented_dev = 0.0;     // proxies for later epochs, deviation part
  [[nodiscard]] double reconstructed() const { return proxy_costs - unimplemented_assign - unimplemented_dev; }
};

inline ProxyDecomposition proxy_decomposition(const Instance& inst, const ArrivalSequence& omega, const RunResult& run) {
  detail::require_proxies(inst, run);
  ProxyDecomposition out;
  const std::int64_t L = inst.epoch_length();
  for (int k = 0; k < inst.K; ++k) {
    out.proxy_costs += cumulative_proxy_cost(inst, omega, run, k);
    const auto pc = detail::proxy_counts(inst, omega, run, k);
    for (int kp = k + 1; kp < inst.K; ++kp) out.unimplemented_assign += pc.costs[static_cast<std::size_t>(kp)];
    for (int i = 0; i < inst.m; ++i) {
      double cum = static_cast<double>(run.state.snapshots(k, i));
      for (int kp = k + 1; kp < inst.K; ++kp) {
        cum += pc.counts(kp, i);
        const double s = static_cast<double>((kp + 1) * L);
        out.unimplemented_dev += s * inst.dev_costs(kp, i).eval(cum / s);
      }
    }
  }
  return out;
}

}  // namespace flowtarget
