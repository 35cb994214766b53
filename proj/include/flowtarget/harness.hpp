#pragma once

// Monte-Carlo experiments. Every replication draws its own instance and
// arrival sequence from (seed, replication) streams, solves the hindsight
// benchmark once and runs every requested policy on the same sample path.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "flowtarget/core.hpp"
#include "flowtarget/instances.hpp"
#include "flowtarget/io.hpp"
#include "flowtarget/oracle.hpp"
#include "flowtarget/policies.hpp"

namespace flowtarget {

struct ExperimentConfig {
  std::optional<Instance> instance;  // fixed instance; otherwise synthetic per replication
  SyntheticParams synthetic;         // m, n, K used when generating
  std::vector<PolicyKind> policies{PolicyKind::proxy_dgd, PolicyKind::smart_me};
  std::vector<std::int64_t> T{501};
  std::vector<double> delta{1.0};
  std::vector<double> gamma{2.0};
  int replications = 10;
  std::uint64_t seed = 0;
  OracleBackend backend = OracleBackend::exact_lp;
  OracleOptions oracle;
  PolicyConfig policy;
  double gap_tol = 1e-6;  // relative to |V^OFF|
  int threads = 1;
  std::string out_dir;  // empty: no files
  std::vector<std::string>* warnings = nullptr;
};

struct MetricsRow {
  std::string policy;
  std::int64_t T = 0;
  double delta = 0.0;
  double gamma = 0.0;
  int replication = 0;
  std::uint64_t seed = 0;
  double value = 0.0;     // V^pi
  double offline = 0.0;   // V^OFF
  double regret = 0.0;
  double relative_regret = 0.0;  // percent of |V^OFF|; absolute regret when flagged
  bool small_offline = false;    // |V^OFF| < 1e-6
  double mean_abs_deviation = 0.0;
  double assignment_per_period = 0.0;
  double oracle_gap = 0.0;
  bool gap_flag = false;
  double runtime = 0.0;  // seconds, policy run only
};

struct AggregateRow {
  std::string policy;
  std::int64_t T = 0;
  double delta = 0.0;
  double gamma = 0.0;
  int count = 0;
  double mean_value = 0.0;
  double mean_offline = 0.0;
  double mean_regret = 0.0;
  double se_regret = 0.0;
  double median_regret = 0.0;
  double mean_relative_regret = 0.0;
  double se_relative_regret = 0.0;
  double mean_abs_deviation = 0.0;
  double assignment_per_period = 0.0;
  int flagged = 0;
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;  // sorted by (T, delta, gamma, replication, policy order)
  std::vector<AggregateRow> aggregates;
  int flagged_gaps = 0;
};

/// Average over (k, i) of |Z_i(kT/K)/(kT/K) - rho_ki|.
inline double mean_abs_target_deviation(const RunResult& run, const Instance& inst) {
  if (run.state.epochs_closed != inst.K) throw StructuralError("run is missing epoch-end snapshots");
  double acc = 0.0;
  for (int k = 0; k < inst.K; ++k) {
    const double s = static_cast<double>(inst.epoch_end(k));
    for (int i = 0; i < inst.m; ++i) acc += std::abs(static_cast<double>(run.state.snapshots(k, i)) / s - inst.targets(k, i));
  }
  return acc / (inst.K * inst.m);
}

inline double relative_regret_percent(double value, double offline, bool* small) {
  const bool tiny = std::abs(offline) < 1e-6;
  if (small != nullptr) *small = tiny;
  return tiny ? value - offline : 100.0 * (value - offline) / std::abs(offline);
}

inline std::int64_t truncate_to_epochs(std::int64_t T, int K, std::vector<std::string>* warnings) {
  const std::int64_t out = T - T % K;
  if (out != T && warnings != nullptr)
    warnings->push_back("T=" + std::to_string(T) + " rounded down to " + std::to_string(out) + " (multiple of K)");
  if (out <= 0) throw DomainError("T must be at least K");
  return out;
}

namespace detail {

struct Cell {
  std::int64_t T;
  double delta;
  double gamma;
  int rep;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline std::vector<MetricsRow> run_cell(const ExperimentConfig& cfg, const Cell& cell) {
  Instance inst;
  if (cfg.instance) {
    inst = *cfg.instance;
    inst.T = cell.T;
    for (int k = 0; k < inst.K; ++k)
      for (int i = 0; i < inst.m; ++i) {
        const auto& g = inst.dev_costs(k, i);
        if (g.family() == DeviationFamily::absolute) inst.set_deviation(k, i, DeviationCost::absolute(cell.delta, g.target()));
      }
  } else {
    SyntheticParams p = cfg.synthetic;
    p.T = cell.T;
    p.delta = cell.delta;
    p.gamma = cell.gamma;
    p.seed = cfg.seed;
    p.substream = static_cast<std::uint32_t>(cell.rep);
    inst = generate_synthetic(p);
  }
  const auto omega = sample_arrivals(inst, cfg.seed, static_cast<std::uint32_t>(cell.rep));
  const auto off = hindsight_optimum(inst, omega, cfg.backend, cfg.oracle);
  const bool gap_flag = off.gap > cfg.gap_tol * std::max(1.0, std::abs(off.value));
  std::vector<MetricsRow> out;
  PolicyConfig pc = cfg.policy;
  pc.trace = TraceLevel::summary;
  for (auto kind : cfg.policies) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = run_policy(kind, inst, omega, pc);
    const auto t1 = std::chrono::steady_clock::now();
    MetricsRow row;
    row.policy = policy_name(kind);
    row.T = cell.T;
    row.delta = cell.delta;
    row.gamma = cell.gamma;
    row.replication = cell.rep;
    row.seed = cfg.seed;
    row.value = run.cost.total;
    row.offline = off.value;
    row.regret = row.value - row.offline;
    row.relative_regret = relative_regret_percent(row.value, row.offline, &row.small_offline);
    row.mean_abs_deviation = mean_abs_target_deviation(run, inst);
    row.assignment_per_period = run.cost.assignment / static_cast<double>(inst.T);
    row.oracle_gap = off.gap;
    row.gap_flag = gap_flag;
    row.runtime = std::chrono::duration<double>(t1 - t0).count();
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace detail

inline std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows) {
  using Key = std::tuple<std::int64_t, double, double, std::string>;
  std::map<Key, std::vector<const MetricsRow*>> groups;
  std::vector<Key> order;
  for (const auto& r : rows) {
    Key key{r.T, r.delta, r.gamma, r.policy};
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    AggregateRow a;
    std::tie(a.T, a.delta, a.gamma, a.policy) = key;
    a.count = static_cast<int>(g.size());
    std::vector<double> regrets;
    double sq = 0.0;
    double sq_rel = 0.0;
    for (const auto* r : g) {
      a.mean_value += r->value;
      a.mean_offline += r->offline;
      a.mean_regret += r->regret;
      a.mean_relative_regret += r->relative_regret;
      a.mean_abs_deviation += r->mean_abs_deviation;
      a.assignment_per_period += r->assignment_per_period;
      a.flagged += r->gap_flag || r->small_offline ? 1 : 0;
      regrets.push_back(r->regret);
    }
    const double n = a.count;
    a.mean_value /= n;
    a.mean_offline /= n;
    a.mean_regret /= n;
    a.mean_relative_regret /= n;
    a.mean_abs_deviation /= n;
    a.assignment_per_period /= n;
    for (const auto* r : g) {
      sq += (r->regret - a.mean_regret) * (r->regret - a.mean_regret);
      sq_rel += (r->relative_regret - a.mean_relative_regret) * (r->relative_regret - a.mean_relative_regret);
    }
    a.se_regret = a.count > 1 ? std::sqrt(sq / (n - 1.0) / n) : 0.0;
    a.se_relative_regret = a.count > 1 ? std::sqrt(sq_rel / (n - 1.0) / n) : 0.0;
    a.median_regret = detail::median(regrets);
    out.push_back(std::move(a));
  }
  return out;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows, bool with_runtime = false) {
  os << "policy,T,delta,gamma,replication,seed,value,offline,regret,relative_regret,small_offline,mean_abs_deviation,"
        "assignment_per_period,oracle_gap,gap_flag";
  if (with_runtime) os << ",runtime";
  os << '\n';
  for (const auto& r : rows) {
    os << r.policy << ',' << r.T << ',' << format_double(r.delta) << ',' << format_double(r.gamma) << ',' << r.replication << ','
       << r.seed << ',' << format_double(r.value) << ',' << format_double(r.offline) << ',' << format_double(r.regret) << ','
       << format_double(r.relative_regret) << ',' << (r.small_offline ? 1 : 0) << ',' << format_double(r.mean_abs_deviation) << ','
       << format_double(r.assignment_per_period) << ',' << format_double(r.oracle_gap) << ',' << (r.gap_flag ? 1 : 0);
    if (with_runtime) os << ',' << format_double(r.runtime);
    os << '\n';
  }
}

inline void write_aggregates_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "policy,T,delta,gamma,count,mean_value,mean_offline,mean_regret,se_regret,median_regret,mean_relative_regret,"
        "se_relative_regret,mean_abs_deviation,assignment_per_period,flagged\n";
  for (const auto& a : rows) {
    os << a.policy << ',' << a.T << ',' << format_double(a.delta) << ',' << format_double(a.gamma) << ',' << a.count << ','
       << format_double(a.mean_value) << ',' << format_double(a.mean_offline) << ',' << format_double(a.mean_regret) << ','
       << format_double(a.se_regret) << ',' << format_double(a.median_regret) << ',' << format_double(a.mean_relative_regret) << ','
       << format_double(a.se_relative_regret) << ',' << format_double(a.mean_abs_deviation) << ','
       << format_double(a.assignment_per_period) << ',' << a.flagged << '\n';
  }
}

/// Runs every (T, delta, gamma, replication) cell on a worker pool. Rows are
/// keyed by cell and sorted afterwards, so output does not depend on thread
/// count or scheduling.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.replications < 1) throw DomainError("replication count must be at least 1");
  if (cfg.policies.empty()) throw DomainError("no policies requested");
  const int K = cfg.instance ? cfg.instance->K : cfg.synthetic.K;
  std::vector<detail::Cell> cells;
  for (auto T : cfg.T) {
    const auto Tk = truncate_to_epochs(T, K, cfg.warnings);
    for (double d : cfg.delta)
      for (double g : cfg.gamma)
        for (int r = 0; r < cfg.replications; ++r) cells.push_back({Tk, d, g, r});
  }
  std::vector<std::vector<MetricsRow>> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      const std::size_t c = next.fetch_add(1);
      if (c >= cells.size()) return;
      try {
        results[c] = detail::run_cell(cfg, cells[c]);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = cells.size();
      }
    }
  };
  const int threads = std::max(1, cfg.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  ExperimentResult out;
  for (auto& rows : results)
    for (auto& r : rows) {
      out.flagged_gaps += r.gap_flag ? 1 : 0;
      out.rows.push_back(std::move(r));
    }
  out.aggregates = aggregate(out.rows);
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream rows_csv(std::filesystem::path(cfg.out_dir) / "replications.csv");
    write_metrics_csv(rows_csv, out.rows);
    std::ofstream agg_csv(std::filesystem::path(cfg.out_dir) / "aggregates.csv");
    write_aggregates_csv(agg_csv, out.aggregates);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regret scaling
// ---------------------------------------------------------------------------

struct ScalingReport {
  std::vector<std::int64_t> T;
  std::vector<double> median_regret;
  double slope = 0.0;
  double intercept = 0.0;
  // Consecutive ratios Reg(T_{i+1}) / Reg(T_i), with the matching T ratio.
  std::vector<double> regret_ratio;
  std::vector<double> horizon_ratio;
};

/// Least-squares slope of log(median regret) on log(T).
inline ScalingReport regret_scaling_report(const std::vector<std::int64_t>& T, const std::vector<double>& median_regret) {
  if (T.size() != median_regret.size() || T.size() < 2) throw DomainError("need at least two (T, regret) points");
  ScalingReport rep;
  rep.T = T;
  rep.median_regret = median_regret;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double n = static_cast<double>(T.size());
  for (std::size_t q = 0; q < T.size(); ++q) {
    if (!(median_regret[q] > 0.0)) throw DomainError("log-log fit needs positive regrets");
    const double x = std::log(static_cast<double>(T[q]));
    const double y = std::log(median_regret[q]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  rep.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  rep.intercept = (sy - rep.slope * sx) / n;
  for (std::size_t q = 0; q + 1 < T.size(); ++q) {
    rep.regret_ratio.push_back(median_regret[q + 1] / median_regret[q]);
    rep.horizon_ratio.push_back(static_cast<double>(T[q + 1]) / static_cast<double>(T[q]));
  }
  return rep;
}

/// Scaling report for one policy from experiment rows (median over replications).
inline ScalingReport regret_scaling_report(const std::vector<MetricsRow>& rows, const std::string& policy) {
  std::map<std::int64_t, std::vector<double>> by_T;
  for (const auto& r : rows)
    if (r.policy == policy) by_T[r.T].push_back(r.regret);
  std::vector<std::int64_t> T;
  std::vector<double> med;
  for (auto& [t, v] : by_T) {
    T.push_back(t);
    med.push_back(detail::median(v));
  }
  return regret_scaling_report(T, med);
}

/// Scaling report from a replications CSV written by run_experiment.
inline ScalingReport regret_scaling_report(std::istream& csv, const std::string& policy) {
  std::string line;
  std::getline(csv, line);
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string h;
    while (std::getline(hs, h, ',')) header.push_back(h);
  }
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw StructuralError("CSV lacks column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto cp = col("policy"), cT = col("T"), cr = col("regret");
  std::vector<MetricsRow> rows;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string x;
    while (std::getline(ls, x, ',')) f.push_back(x);
    MetricsRow r;
    r.policy = f.at(cp);
    r.T = std::stoll(f.at(cT));
    r.regret = std::stod(f.at(cr));
    rows.push_back(std::move(r));
  }
  return regret_scaling_report(rows, policy);
}

}  // namespace flowtarget
