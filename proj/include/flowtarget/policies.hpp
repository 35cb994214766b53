#pragma once

// Online control policies. Each is a pure function of (instance, arrival
// sequence, configuration) returning a RunResult.
//
//   run_proxy_dual_gd      dual gradient descent with proxy assignments
//   run_single_epoch_dgd   dual gradient descent for one epoch
//   run_myopic             ME / Smart-ME: the single-epoch method per epoch
//   run_naive_primal_dual  one dual row per epoch, all of them priced at once
//   run_greedy             cheapest resource if its cost is negative

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowtarget/box_solver.hpp"
#include "flowtarget/core.hpp"

namespace flowtarget {

enum class TieRule {
  lowest_index,  // lowest resource index; assignment wins an exact tie with reject
  prefer_reject,  // lowest resource index; reject wins an exact tie
};

struct PolicyConfig {
  std::optional<double> eta;  // overrides eta_mult * sqrt(K/T)
  double eta_mult = 1.0;
  Matrix<double> mu1;  // K x m; empty means all zero
  BoxSolverOptions aux;
  bool warm_start = true;  // reuse the previous idealized consumption (subgradient method)
  TieRule tie = TieRule::lowest_index;
  TraceLevel trace = TraceLevel::decisions;
};

inline double resolve_eta(const Instance& inst, const PolicyConfig& cfg) {
  const double eta = cfg.eta ? *cfg.eta : cfg.eta_mult * std::sqrt(static_cast<double>(inst.K) / static_cast<double>(inst.T));
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw DomainError("stepsize must be finite and nonnegative");
  return eta;
}

inline Matrix<double> resolve_mu1(const Instance& inst, const PolicyConfig& cfg) {
  if (cfg.mu1.empty()) return Matrix<double>(static_cast<std::size_t>(inst.K), static_cast<std::size_t>(inst.m), 0.0);
  if (cfg.mu1.rows() != static_cast<std::size_t>(inst.K) || cfg.mu1.cols() != static_cast<std::size_t>(inst.m))
    throw StructuralError("initial duals must be K x m");
  for (double v : cfg.mu1.data())
    if (!std::isfinite(v)) throw DomainError("initial duals must be finite");
  return cfg.mu1;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// argmin over {reject} U S of c_i - price_i, reject costing 0.
inline int proxy_assign(std::span<const double> costs, std::span<const int> feasible, std::span<const double> price,
                        TieRule tie = TieRule::lowest_index) {
  int best = -1;
  double best_value = 0.0;
  for (int i : feasible) {
    const double v = costs[static_cast<std::size_t>(i)] - price[static_cast<std::size_t>(i)];
    const bool better = best < 0 ? (tie == TieRule::lowest_index ? v <= 0.0 : v < 0.0) : v < best_value;
    if (better) {
      best = i;
      best_value = v;
    }
  }
  return best;
}

/// Elementwise mu + eta * (a - x).
inline std::vector<double> ogd_update(std::span<const double> mu, std::span<const double> a, std::span<const double> x,
                                      double eta) {
  std::vector<double> out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = mu[i] + eta * (a[i] - x[i]);
  return out;
}

struct IdealizedConsumption {
  Matrix<double> a;  // (K - k) x m, row d belongs to epoch k + d
  int solves = 0;
  int nonconverged = 0;
};

/// Box objective of the idealized-consumption problem for one resource.
/// Epoch k' >= k (0-based) enters with weight k'+1, offset X/((k'+1)L) and
/// coefficient 1/(k'+1) on the prefix a_k + ... + a_{k'}.
inline BoxObjective idealized_objective(const Instance& inst, int k, std::span<const double> mu_col, double prior, int i) {
  const int D = inst.K - k;
  BoxObjective f(D);
  const double L = static_cast<double>(inst.epoch_length());
  for (int d = 0; d < D; ++d) {
    const int kp = k + d;
    const double kappa = kp + 1.0;
    f.linear[static_cast<std::size_t>(d)] = mu_col[static_cast<std::size_t>(d)];
    const auto& g = inst.dev_costs(kp, i);
    if (g.family() == DeviationFamily::zero) continue;
    f.terms.push_back(BoxTerm{kappa, g, prior / (kappa * L), 1.0 / kappa, d});
  }
  return f;
}

/// Idealized average consumption for epochs k..K-1 given duals `mu` (K x m,
/// rows k.. used) and cumulative consumption `prior` at the end of epoch k-1.
inline IdealizedConsumption idealized_consumption(const Instance& inst, int k, const Matrix<double>& mu,
                                                  std::span<const double> prior, const Matrix<double>* warm = nullptr,
                                                  const BoxSolverOptions& opt = {}) {
  const int D = inst.K - k;
  const double L = static_cast<double>(inst.epoch_length());
  IdealizedConsumption out;
  out.a = Matrix<double>(static_cast<std::size_t>(D), static_cast<std::size_t>(inst.m), 0.0);
  std::vector<double> mu_col(static_cast<std::size_t>(D));
  std::vector<double> start;
  for (int i = 0; i < inst.m; ++i) {
    if (prior[static_cast<std::size_t>(i)] > k * L + 1e-9) throw DomainError("prior consumption exceeds elapsed periods");
    for (int d = 0; d < D; ++d) mu_col[static_cast<std::size_t>(d)] = mu(k + d, i);
    const auto f = idealized_objective(inst, k, mu_col, prior[static_cast<std::size_t>(i)], i);
    start.assign(static_cast<std::size_t>(D), 0.0);
    if (warm != nullptr && warm->rows() == static_cast<std::size_t>(D))
      for (int d = 0; d < D; ++d) start[static_cast<std::size_t>(d)] = (*warm)(d, i);
    const auto sol = solve_box_convex(f, start, opt);
    ++out.solves;
    if (!sol.converged) ++out.nonconverged;
    for (int d = 0; d < D; ++d) out.a(d, i) = sol.point[static_cast<std::size_t>(d)];
  }
  return out;
}

/// argmin over [0,1] of g(a) + price * a.
inline BoxSolution single_deviation_step(const DeviationCost& g, double price, double warm, const BoxSolverOptions& opt) {
  BoxObjective f(1);
  f.linear[0] = price;
  if (g.family() != DeviationFamily::zero) f.terms.push_back(BoxTerm{1.0, g, 0.0, 1.0, 0});
  return solve_box_convex(f, {warm}, opt);
}

namespace detail {

inline RunResult start_result(const Instance& inst, const ArrivalSequence& omega, const std::string& name, double eta) {
  inst.validate({.require_equal_epochs = true, .require_unit_targets = false});
  omega.validate(inst);
  RunResult r;
  r.policy = name;
  r.eta = eta;
  r.decisions.reserve(static_cast<std::size_t>(inst.T));
  r.state = ConsumptionState(inst);
  return r;
}

inline void append_matrix(std::vector<double>& dst, const Matrix<double>& src) {
  dst.insert(dst.end(), src.data().begin(), src.data().end());
}

// One epoch of the single-epoch method: periods [t0, t1), deviation row `dev`,
// initial prices `mu`. Appends to `r` and closes the epoch.
inline void single_epoch_segment(const Instance& inst, const ArrivalSequence& omega, std::int64_t t0, std::int64_t t1,
                                 std::span<const DeviationCost> dev, std::vector<double> mu, int epoch, double eta,
                                 const PolicyConfig& cfg, std::span<const int> all, RunResult& r) {
  const auto m = static_cast<std::size_t>(inst.m);
  std::vector<double> a(m, 0.0);
  std::vector<double> x(m, 0.0);
  const bool full = cfg.trace == TraceLevel::full;
  for (std::int64_t t = t0; t < t1; ++t) {
    const auto view = arrival_at(inst, omega, t, all);
    const int decision = proxy_assign(view.costs, view.feasible, mu, cfg.tie);
    r.decisions.push_back(decision);
    r.state.record(view, decision);
    for (std::size_t i = 0; i < m; ++i) {
      const auto sol = single_deviation_step(dev[i], mu[i], cfg.warm_start ? a[i] : 0.0, cfg.aux);
      ++r.aux_solves;
      if (!sol.converged) ++r.aux_nonconverged;
      a[i] = sol.point[0];
    }
    if (full) {
      Matrix<double> duals(static_cast<std::size_t>(inst.K), m, std::numeric_limits<double>::quiet_NaN());
      Matrix<double> aux = duals;
      for (std::size_t i = 0; i < m; ++i) {
        duals(static_cast<std::size_t>(epoch), i) = mu[i];
        aux(static_cast<std::size_t>(epoch), i) = a[i];
      }
      append_matrix(r.duals, duals);
      append_matrix(r.aux, aux);
    }
    std::fill(x.begin(), x.end(), 0.0);
    if (decision >= 0) x[static_cast<std::size_t>(decision)] = 1.0;
    mu = ogd_update(mu, a, x, eta);
  }
  r.state.close_epoch();
  if (full) {
    if (r.final_duals.empty()) r.final_duals.assign(static_cast<std::size_t>(inst.K) * m, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < m; ++i) r.final_duals[static_cast<std::size_t>(epoch) * m + i] = mu[i];
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Dual gradient descent with proxy assignments.
///
/// Every period of epoch k prices the arrival once per remaining epoch k' >= k
/// with that epoch's duals (the proxy decisions), implements the proxy for
/// epoch k, solves the joint idealized-consumption problem and moves each
/// dual row toward agreement of proxy and idealized consumption.
///
/// At the first period of every epoch the dual rows of that and all later
/// epochs are reset to their initial values.
inline RunResult run_proxy_dual_gd(const Instance& inst, const ArrivalSequence& omega, const PolicyConfig& cfg = {}) {
  const double eta = resolve_eta(inst, cfg);
  RunResult r = detail::start_result(inst, omega, "proxy-dgd", eta);
  const Matrix<double> mu1 = resolve_mu1(inst, cfg);
  Matrix<double> mu = mu1;
  const auto m = static_cast<std::size_t>(inst.m);
  const std::int64_t L = inst.epoch_length();
  const auto all = iota_resources(inst.m);
  const bool record_proxies = cfg.trace != TraceLevel::summary;
  const bool full = cfg.trace == TraceLevel::full;
  if (record_proxies) {
    r.proxy_offset.reserve(static_cast<std::size_t>(inst.T));
    r.proxy.reserve(static_cast<std::size_t>(inst.T));
  }

  std::vector<double> prior(m, 0.0);
  std::vector<int> proxies(static_cast<std::size_t>(inst.K), -1);
  Matrix<double> last_a;
  for (std::int64_t t = 0; t < inst.T; ++t) {
    const int k = inst.epoch_of(t);
    if (t == k * L) {
      for (int kp = k; kp < inst.K; ++kp)
        for (std::size_t i = 0; i < m; ++i) mu(static_cast<std::size_t>(kp), i) = mu1(static_cast<std::size_t>(kp), i);
      for (std::size_t i = 0; i < m; ++i) prior[i] = static_cast<double>(r.state.by_resource[i]);
      last_a = Matrix<double>();
    }
    const auto view = arrival_at(inst, omega, t, all);
    for (int kp = k; kp < inst.K; ++kp)
      proxies[static_cast<std::size_t>(kp)] = proxy_assign(view.costs, view.feasible, mu.row(static_cast<std::size_t>(kp)), cfg.tie);
    const int decision = proxies[static_cast<std::size_t>(k)];
    r.decisions.push_back(decision);
    r.state.record(view, decision);
    if (record_proxies) {
      r.proxy_offset.push_back(static_cast<std::int64_t>(r.proxy.size()));
      for (int kp = k; kp < inst.K; ++kp) r.proxy.push_back(proxies[static_cast<std::size_t>(kp)]);
    }

    auto ideal = idealized_consumption(inst, k, mu, prior, cfg.warm_start ? &last_a : nullptr, cfg.aux);
    r.aux_solves += ideal.solves;
    r.aux_nonconverged += ideal.nonconverged;

    if (full) {
      detail::append_matrix(r.duals, mu);
      Matrix<double> aux(static_cast<std::size_t>(inst.K), m, std::numeric_limits<double>::quiet_NaN());
      for (int kp = k; kp < inst.K; ++kp)
        for (std::size_t i = 0; i < m; ++i) aux(static_cast<std::size_t>(kp), i) = ideal.a(static_cast<std::size_t>(kp - k), i);
      detail::append_matrix(r.aux, aux);
    }

    for (int kp = k; kp < inst.K; ++kp) {
      const int px = proxies[static_cast<std::size_t>(kp)];
      for (std::size_t i = 0; i < m; ++i) {
        const double x = px == static_cast<int>(i) ? 1.0 : 0.0;
        mu(static_cast<std::size_t>(kp), i) += eta * (ideal.a(static_cast<std::size_t>(kp - k), i) - x);
      }
    }
    last_a = std::move(ideal.a);
    if ((t + 1) % L == 0) r.state.close_epoch();
  }
  if (full) r.final_duals = mu.data();
  finalize(inst, r);
  return r;
}

/// Single-epoch dual gradient descent. Requires K = 1.
inline RunResult run_single_epoch_dgd(const Instance& inst, const ArrivalSequence& omega, const PolicyConfig& cfg = {}) {
  if (inst.K != 1) throw DomainError("single-epoch method needs an instance with K = 1");
  const double eta = resolve_eta(inst, cfg);
  RunResult r = detail::start_result(inst, omega, "single-epoch-dgd", eta);
  const auto mu1 = resolve_mu1(inst, cfg);
  const auto all = iota_resources(inst.m);
  const auto dev = inst.dev_costs.row(0);
  detail::single_epoch_segment(inst, omega, 0, inst.T, dev, {mu1.row(0).begin(), mu1.row(0).end()}, 0, eta, cfg, all, r);
  finalize(inst, r);
  return r;
}

enum class MyopicVariant { me, smart_me };

/// Epoch-specific target for epoch k (0-based) of the myopic benchmarks.
/// ME assumes every earlier cumulative target was met; Smart-ME uses the
/// realized consumption. Not clamped to [0,1].
inline double myopic_target(const Instance& inst, MyopicVariant variant, int k, int i, double realized_prior) {
  const double kappa = k + 1.0;
  const double rho = inst.targets(k, i);
  if (variant == MyopicVariant::me) {
    const double prev = k > 0 ? inst.targets(k - 1, i) : 0.0;
    return kappa * rho - k * prev;
  }
  return kappa * rho - realized_prior / static_cast<double>(inst.epoch_length());
}

/// ME / Smart-ME: the single-epoch method run independently on every epoch
/// with epoch-specific targets and duals restarted from the initial values.
inline RunResult run_myopic(const Instance& inst, const ArrivalSequence& omega, const PolicyConfig& cfg,
                            MyopicVariant variant) {
  const double eta = resolve_eta(inst, cfg);
  RunResult r = detail::start_result(inst, omega, variant == MyopicVariant::me ? "me" : "smart-me", eta);
  const auto mu1 = resolve_mu1(inst, cfg);
  const auto all = iota_resources(inst.m);
  const std::int64_t L = inst.epoch_length();
  std::vector<DeviationCost> dev(static_cast<std::size_t>(inst.m));
  for (int k = 0; k < inst.K; ++k) {
    for (int i = 0; i < inst.m; ++i) {
      const double prior = static_cast<double>(r.state.by_resource[static_cast<std::size_t>(i)]);
      dev[static_cast<std::size_t>(i)] = inst.dev_costs(k, i).retargeted(myopic_target(inst, variant, k, i, prior));
    }
    const auto row = mu1.row(static_cast<std::size_t>(k));
    detail::single_epoch_segment(inst, omega, k * L, (k + 1) * L, dev, {row.begin(), row.end()}, k, eta, cfg, all, r);
  }
  finalize(inst, r);
  return r;
}

/// One dual row per epoch; the primal step prices the arrival with the sum
/// of all current and future rows, and every row is updated against the same
/// implemented decision. No per-epoch reset.
inline RunResult run_naive_primal_dual(const Instance& inst, const ArrivalSequence& omega, const PolicyConfig& cfg = {}) {
  const double eta = resolve_eta(inst, cfg);
  RunResult r = detail::start_result(inst, omega, "naive-pd", eta);
  Matrix<double> mu = resolve_mu1(inst, cfg);
  const auto m = static_cast<std::size_t>(inst.m);
  const auto all = iota_resources(inst.m);
  const std::int64_t L = inst.epoch_length();
  const bool full = cfg.trace == TraceLevel::full;
  std::vector<double> price(m);
  Matrix<double> a(static_cast<std::size_t>(inst.K), m, 0.0);
  for (std::int64_t t = 0; t < inst.T; ++t) {
    const int k = inst.epoch_of(t);
    std::fill(price.begin(), price.end(), 0.0);
    for (int kp = k; kp < inst.K; ++kp)
      for (std::size_t i = 0; i < m; ++i) price[i] += mu(static_cast<std::size_t>(kp), i);
    const auto view = arrival_at(inst, omega, t, all);
    const int decision = proxy_assign(view.costs, view.feasible, price, cfg.tie);
    r.decisions.push_back(decision);
    r.state.record(view, decision);
    for (int kp = k; kp < inst.K; ++kp) {
      for (std::size_t i = 0; i < m; ++i) {
        const auto sol = single_deviation_step(inst.dev_costs(kp, static_cast<int>(i)), mu(static_cast<std::size_t>(kp), i),
                                               cfg.warm_start ? a(static_cast<std::size_t>(kp), i) : 0.0, cfg.aux);
        ++r.aux_solves;
        if (!sol.converged) ++r.aux_nonconverged;
        a(static_cast<std::size_t>(kp), i) = sol.point[0];
      }
    }
    if (full) {
      detail::append_matrix(r.duals, mu);
      Matrix<double> aux = a;
      for (int kp = 0; kp < k; ++kp)
        for (std::size_t i = 0; i < m; ++i) aux(static_cast<std::size_t>(kp), i) = std::numeric_limits<double>::quiet_NaN();
      detail::append_matrix(r.aux, aux);
    }
    for (int kp = k; kp < inst.K; ++kp)
      for (std::size_t i = 0; i < m; ++i)
        mu(static_cast<std::size_t>(kp), i) += eta * (a(static_cast<std::size_t>(kp), i) - (decision == static_cast<int>(i) ? 1.0 : 0.0));
    if ((t + 1) % L == 0) r.state.close_epoch();
  }
  if (full) r.final_duals = mu.data();
  finalize(inst, r);
  return r;
}

/// Cheapest feasible resource when its cost is strictly negative, else reject.
inline RunResult run_greedy(const Instance& inst, const ArrivalSequence& omega) {
  RunResult r = detail::start_result(inst, omega, "greedy", 0.0);
  const auto all = iota_resources(inst.m);
  const std::vector<double> zero(static_cast<std::size_t>(inst.m), 0.0);
  const std::int64_t L = inst.epoch_length();
  for (std::int64_t t = 0; t < inst.T; ++t) {
    const auto view = arrival_at(inst, omega, t, all);
    const int decision = proxy_assign(view.costs, view.feasible, zero, TieRule::prefer_reject);
    r.decisions.push_back(decision);
    r.state.record(view, decision);
    if ((t + 1) % L == 0) r.state.close_epoch();
  }
  finalize(inst, r);
  return r;
}

enum class PolicyKind { proxy_dgd, single_epoch_dgd, me, smart_me, naive_pd, greedy };

inline const char* policy_name(PolicyKind p) {
  switch (p) {
    case PolicyKind::proxy_dgd: return "proxy-dgd";
    case PolicyKind::single_epoch_dgd: return "single-epoch-dgd";
    case PolicyKind::me: return "me";
    case PolicyKind::smart_me: return "smart-me";
    case PolicyKind::naive_pd: return "naive-pd";
    case PolicyKind::greedy: return "greedy";
  }
  return "?";
}

inline PolicyKind parse_policy(const std::string& s) {
  for (auto p : {PolicyKind::proxy_dgd, PolicyKind::single_epoch_dgd, PolicyKind::me, PolicyKind::smart_me,
                 PolicyKind::naive_pd, PolicyKind::greedy})
    if (s == policy_name(p)) return p;
  throw std::invalid_argument("unknown policy '" + s + "'");
}

inline RunResult run_policy(PolicyKind p, const Instance& inst, const ArrivalSequence& omega, const PolicyConfig& cfg = {}) {
  switch (p) {
    case PolicyKind::proxy_dgd: return run_proxy_dual_gd(inst, omega, cfg);
    case PolicyKind::single_epoch_dgd: return run_single_epoch_dgd(inst, omega, cfg);
    case PolicyKind::me: return run_myopic(inst, omega, cfg, MyopicVariant::me);
    case PolicyKind::smart_me: return run_myopic(inst, omega, cfg, MyopicVariant::smart_me);
    case PolicyKind::naive_pd: return run_naive_primal_dual(inst, omega, cfg);
    case PolicyKind::greedy: return run_greedy(inst, omega);
  }
  throw std::invalid_argument("unknown policy");
}

}  // namespace flowtarget
