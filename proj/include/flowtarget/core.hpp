#pragma once

// Domain types shared by every policy and oracle: deviation-cost families,
// problem instances, arrival sequences, consumption accounting and the
// total-cost functional.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flowtarget {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// A required piece of data (snapshot, trace, ...) is missing or malformed.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A solver backend was asked for a deviation family it cannot represent.
class UnsupportedFamily : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Instance data violating one of its invariants.
class InvalidInstance : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix with value semantics.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, const T& fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  [[nodiscard]] const std::vector<T>& data() const noexcept { return data_; }
  std::vector<T>& data() noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Deviation costs
// ---------------------------------------------------------------------------

enum class DeviationFamily { zero, under_over, absolute, squared };

inline const char* to_string(DeviationFamily f) {
  switch (f) {
    case DeviationFamily::zero: return "zero";
    case DeviationFamily::under_over: return "under_over";
    case DeviationFamily::absolute: return "absolute";
    case DeviationFamily::squared: return "squared";
  }
  return "?";
}

/// Convex penalty g(a) on the running-average consumption a of one resource
/// at the end of one epoch, with g(target) = 0.
///
/// `eval`/`subgrad` are defined on [0,1] and reject anything else. The
/// `*_extended` variants evaluate the same closed form on the whole real line;
/// solvers and the per-period rescaling need them because intermediate
/// arguments (or shifted myopic targets) can sit outside the unit interval.
class DeviationCost {
 public:
  DeviationCost() = default;

  static DeviationCost zero(double target = 0.0) {
    return DeviationCost(DeviationFamily::zero, 0.0, 0.0, target);
  }
  static DeviationCost under_over(double over, double under, double target) {
    if (!(over >= 0.0) || !(under >= 0.0)) throw DomainError("under/over penalties must be >= 0");
    return DeviationCost(DeviationFamily::under_over, over, under, target);
  }
  static DeviationCost absolute(double delta, double target) {
    if (!(delta >= 0.0)) throw DomainError("absolute penalty must be >= 0");
    return DeviationCost(DeviationFamily::absolute, delta, delta, target);
  }
  static DeviationCost squared(double delta, double target) {
    if (!(delta >= 0.0)) throw DomainError("squared penalty must be >= 0");
    return DeviationCost(DeviationFamily::squared, delta, delta, target);
  }

  [[nodiscard]] DeviationFamily family() const noexcept { return family_; }
  [[nodiscard]] double target() const noexcept { return target_; }
  /// Penalty slope above target (delta for absolute/squared).
  [[nodiscard]] double over() const noexcept { return over_; }
  /// Penalty slope below target (delta for absolute/squared).
  [[nodiscard]] double under() const noexcept { return under_; }
  [[nodiscard]] double delta() const noexcept { return over_; }

  [[nodiscard]] bool piecewise_linear() const noexcept { return family_ != DeviationFamily::squared; }

  [[nodiscard]] double eval(double a) const {
    check_domain(a);
    return eval_extended(std::clamp(a, 0.0, 1.0));
  }

  /// Element of the subdifferential; at a kink the minimizing choice 0.
  [[nodiscard]] double subgrad(double a) const {
    check_domain(a);
    return subgrad_extended(std::clamp(a, 0.0, 1.0));
  }

  [[nodiscard]] double eval_extended(double a) const noexcept {
    const double d = a - target_;
    switch (family_) {
      case DeviationFamily::zero: return 0.0;
      case DeviationFamily::under_over:
      case DeviationFamily::absolute: return d > 0.0 ? over_ * d : -under_ * d;
      case DeviationFamily::squared: return over_ * d * d;
    }
    return 0.0;
  }

  [[nodiscard]] double subgrad_extended(double a) const noexcept {
    const double d = a - target_;
    switch (family_) {
      case DeviationFamily::zero: return 0.0;
      case DeviationFamily::under_over:
      case DeviationFamily::absolute:
        if (d > 0.0) return over_;
        if (d < 0.0) return -under_;
        return 0.0;
      case DeviationFamily::squared: return 2.0 * over_ * d;
    }
    return 0.0;
  }

  [[nodiscard]] double right_derivative(double a) const noexcept {
    const double d = a - target_;
    switch (family_) {
      case DeviationFamily::zero: return 0.0;
      case DeviationFamily::under_over:
      case DeviationFamily::absolute: return d >= 0.0 ? over_ : -under_;
      case DeviationFamily::squared: return 2.0 * over_ * d;
    }
    return 0.0;
  }

  [[nodiscard]] double left_derivative(double a) const noexcept {
    const double d = a - target_;
    switch (family_) {
      case DeviationFamily::zero: return 0.0;
      case DeviationFamily::under_over:
      case DeviationFamily::absolute: return d > 0.0 ? over_ : -under_;
      case DeviationFamily::squared: return 2.0 * over_ * d;
    }
    return 0.0;
  }

  /// Lipschitz constant on [0,1].
  [[nodiscard]] double lipschitz() const noexcept {
    switch (family_) {
      case DeviationFamily::zero: return 0.0;
      case DeviationFamily::under_over:
      case DeviationFamily::absolute: return std::max(over_, under_);
      case DeviationFamily::squared: return 2.0 * over_;
    }
    return 0.0;
  }

  /// argmin over [0,1] of lambda * g(a) + (a - v)^2 / 2.
  [[nodiscard]] double prox(double v, double lambda) const {
    double a = v;
    switch (family_) {
      case DeviationFamily::zero: break;
      case DeviationFamily::under_over:
      case DeviationFamily::absolute:
        if (v > target_ + lambda * over_) {
          a = v - lambda * over_;
        } else if (v < target_ - lambda * under_) {
          a = v + lambda * under_;
        } else {
          a = target_;
        }
        break;
      case DeviationFamily::squared: a = (v + 2.0 * lambda * over_ * target_) / (1.0 + 2.0 * lambda * over_); break;
    }
    return std::clamp(a, 0.0, 1.0);
  }

  [[nodiscard]] DeviationCost retargeted(double target) const {
    DeviationCost out = *this;
    out.target_ = target;
    return out;
  }

  /// The function a -> outer * g(inner * a), expressed in the same family.
  [[nodiscard]] DeviationCost rescaled(double outer, double inner) const {
    if (!(outer > 0.0) || !(inner > 0.0)) throw DomainError("rescaling factors must be positive");
    DeviationCost out = *this;
    out.target_ = target_ / inner;
    switch (family_) {
      case DeviationFamily::zero: break;
      case DeviationFamily::under_over:
      case DeviationFamily::absolute:
        out.over_ = outer * inner * over_;
        out.under_ = outer * inner * under_;
        break;
      case DeviationFamily::squared:
        out.over_ = outer * inner * inner * over_;
        out.under_ = out.over_;
        break;
    }
    return out;
  }

  friend bool operator==(const DeviationCost&, const DeviationCost&) = default;

 private:
  DeviationCost(DeviationFamily f, double over, double under, double target)
      : family_(f), over_(over), under_(under), target_(target) {
    if (!std::isfinite(target)) throw DomainError("deviation target must be finite");
  }

  static void check_domain(double a) {
    constexpr double slack = 1e-12;
    if (!(a >= -slack && a <= 1.0 + slack)) {
      throw DomainError("deviation cost argument " + std::to_string(a) + " outside [0,1]");
    }
  }

  DeviationFamily family_ = DeviationFamily::zero;
  double over_ = 0.0;
  double under_ = 0.0;
  double target_ = 0.0;
};

// ---------------------------------------------------------------------------
// Instance
// ---------------------------------------------------------------------------

enum class ArrivalMode { discrete, continuous };

struct ValidationOptions {
  bool require_equal_epochs = true;  // T mod K == 0
  bool require_unit_targets = true;  // rho in [0,1]
};

/// Full problem description. Indices are 0-based throughout.
///
/// In continuous mode there are no types: every arrival carries its own cost
/// vector and may use any resource; `costs`, `feasible_sets` and `probs` are
/// empty and `n == 0`.
struct Instance {
  int m = 0;
  int n = 0;
  int K = 1;
  std::int64_t T = 0;
  ArrivalMode mode = ArrivalMode::discrete;
  Matrix<double> costs;                       // n x m
  std::vector<std::vector<int>> feasible_sets;  // per type, sorted
  std::vector<double> probs;                  // n
  Matrix<double> targets;                     // K x m
  Matrix<DeviationCost> dev_costs;            // K x m
  // Targets may leave [0,1]; set by the per-period nonstationary rescaling.
  bool extended_targets = false;

  friend bool operator==(const Instance&, const Instance&) = default;

  [[nodiscard]] std::int64_t epoch_length() const noexcept { return T / K; }
  [[nodiscard]] int epoch_of(std::int64_t t) const noexcept {
    return static_cast<int>(t / epoch_length());
  }
  /// Number of periods from the horizon start to the end of epoch k (0-based).
  [[nodiscard]] std::int64_t epoch_end(int k) const noexcept { return (k + 1) * epoch_length(); }

  [[nodiscard]] double c_max() const noexcept {
    double out = 0.0;
    for (double c : costs.data()) out = std::max(out, std::abs(c));
    return out;
  }

  [[nodiscard]] double lipschitz_max() const noexcept {
    double out = 0.0;
    for (const auto& g : dev_costs.data()) out = std::max(out, g.lipschitz());
    return out;
  }

  [[nodiscard]] bool all_piecewise_linear() const noexcept {
    return std::all_of(dev_costs.data().begin(), dev_costs.data().end(),
                       [](const DeviationCost& g) { return g.piecewise_linear(); });
  }

  [[nodiscard]] bool feasible(int type, int resource) const {
    const auto& s = feasible_sets[static_cast<std::size_t>(type)];
    return std::binary_search(s.begin(), s.end(), resource);
  }

  /// Sets deviation cost and target of (k, i) together.
  void set_deviation(int k, int i, const DeviationCost& g) {
    dev_costs(k, i) = g;
    targets(k, i) = g.target();
  }

  void validate(const ValidationOptions& opt = {}) const {
    if (m <= 0) throw InvalidInstance("m must be positive");
    if (K <= 0) throw InvalidInstance("K must be positive");
    if (T <= 0) throw InvalidInstance("T must be positive");
    if (opt.require_equal_epochs && T % K != 0) throw InvalidInstance("T must be a multiple of K");
    if (targets.rows() != static_cast<std::size_t>(K) || targets.cols() != static_cast<std::size_t>(m))
      throw InvalidInstance("targets must be K x m");
    if (dev_costs.rows() != static_cast<std::size_t>(K) || dev_costs.cols() != static_cast<std::size_t>(m))
      throw InvalidInstance("dev_costs must be K x m");
    for (int k = 0; k < K; ++k) {
      for (int i = 0; i < m; ++i) {
        const double rho = targets(k, i);
        if (!std::isfinite(rho)) throw InvalidInstance("targets must be finite");
        if (opt.require_unit_targets && !extended_targets && (rho < 0.0 || rho > 1.0))
          throw InvalidInstance("target outside [0,1]");
        const auto& g = dev_costs(k, i);
        if (g.family() != DeviationFamily::zero && std::abs(g.target() - rho) > 1e-12)
          throw InvalidInstance("deviation cost target disagrees with targets matrix");
      }
    }
    if (mode == ArrivalMode::continuous) {
      if (n != 0 || !costs.empty() || !probs.empty())
        throw InvalidInstance("continuous-mode instances carry no type data");
      return;
    }
    if (n <= 0) throw InvalidInstance("n must be positive in discrete mode");
    if (costs.rows() != static_cast<std::size_t>(n) || costs.cols() != static_cast<std::size_t>(m))
      throw InvalidInstance("costs must be n x m");
    for (double c : costs.data())
      if (!std::isfinite(c)) throw InvalidInstance("costs must be finite");
    if (feasible_sets.size() != static_cast<std::size_t>(n))
      throw InvalidInstance("one feasible set per type required");
    for (const auto& s : feasible_sets) {
      if (!std::is_sorted(s.begin(), s.end()) || std::adjacent_find(s.begin(), s.end()) != s.end())
        throw InvalidInstance("feasible sets must be sorted and duplicate-free");
      for (int i : s)
        if (i < 0 || i >= m) throw InvalidInstance("feasible set entry out of range");
    }
    if (probs.size() != static_cast<std::size_t>(n)) throw InvalidInstance("one probability per type");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidInstance("probabilities must lie in [0,1]");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidInstance("probabilities must sum to 1");
  }
};

/// Instance skeleton with every resource feasible for every type and Zero
/// deviation costs; callers fill in what they need.
inline Instance make_instance(int m, int n, int K, std::int64_t T) {
  Instance inst;
  inst.m = m;
  inst.n = n;
  inst.K = K;
  inst.T = T;
  inst.costs = Matrix<double>(static_cast<std::size_t>(n), static_cast<std::size_t>(m), 0.0);
  inst.feasible_sets.assign(static_cast<std::size_t>(n), {});
  for (auto& s : inst.feasible_sets) {
    s.resize(static_cast<std::size_t>(m));
    std::iota(s.begin(), s.end(), 0);
  }
  inst.probs.assign(static_cast<std::size_t>(n), n > 0 ? 1.0 / n : 0.0);
  inst.targets = Matrix<double>(static_cast<std::size_t>(K), static_cast<std::size_t>(m), 0.0);
  inst.dev_costs = Matrix<DeviationCost>(static_cast<std::size_t>(K), static_cast<std::size_t>(m));
  return inst;
}

// ---------------------------------------------------------------------------
// Arrivals
// ---------------------------------------------------------------------------

/// A sample path: T type indices (discrete) or T realized cost vectors
/// (continuous, every resource feasible).
struct ArrivalSequence {
  ArrivalMode mode = ArrivalMode::discrete;
  std::vector<int> types;  // discrete
  Matrix<double> costs;    // continuous, T x m
  std::uint64_t seed = 0;
  std::string stream;

  [[nodiscard]] std::int64_t length() const noexcept {
    return mode == ArrivalMode::discrete ? static_cast<std::int64_t>(types.size())
                                         : static_cast<std::int64_t>(costs.rows());
  }

  void validate(const Instance& inst) const {
    if (mode != inst.mode) throw StructuralError("arrival mode does not match instance");
    if (length() != inst.T) throw StructuralError("arrival sequence length must equal T");
    if (mode == ArrivalMode::discrete) {
      for (int j : types)
        if (j < 0 || j >= inst.n) throw StructuralError("arrival type out of range");
    } else if (costs.cols() != static_cast<std::size_t>(inst.m)) {
      throw StructuralError("continuous arrivals need one cost per resource");
    }
  }
};

/// What a policy sees in period t.
struct ArrivalView {
  int type = -1;  // -1 in continuous mode
  std::span<const double> costs;
  std::span<const int> feasible;
};

/// Resolves period t of an arrival sequence. `all_resources` backs the
/// feasible span in continuous mode and must outlive the view.
inline ArrivalView arrival_at(const Instance& inst, const ArrivalSequence& omega, std::int64_t t,
                              std::span<const int> all_resources) {
  if (omega.mode == ArrivalMode::discrete) {
    const int j = omega.types[static_cast<std::size_t>(t)];
    return {j, inst.costs.row(static_cast<std::size_t>(j)), inst.feasible_sets[static_cast<std::size_t>(j)]};
  }
  return {-1, omega.costs.row(static_cast<std::size_t>(t)), all_resources};
}

inline std::vector<int> iota_resources(int m) {
  std::vector<int> out(static_cast<std::size_t>(m));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

// ---------------------------------------------------------------------------
// Consumption accounting
// ---------------------------------------------------------------------------

/// Cumulative assignment counts of a single run. Single writer.
struct ConsumptionState {
  Matrix<std::int64_t> by_type;         // n x m, Z_ji(t)
  std::vector<std::int64_t> arrivals;   // n, Lambda_j(t)
  std::vector<std::int64_t> by_resource;  // m, Z_i(t)
  Matrix<std::int64_t> snapshots;       // K x m, Z_i(kT/K)
  int epochs_closed = 0;
  std::int64_t periods = 0;
  double continuous_assignment_cost = 0.0;

  ConsumptionState() = default;
  explicit ConsumptionState(const Instance& inst)
      : by_type(static_cast<std::size_t>(inst.n), static_cast<std::size_t>(inst.m), 0),
        arrivals(static_cast<std::size_t>(inst.n), 0),
        by_resource(static_cast<std::size_t>(inst.m), 0),
        snapshots(static_cast<std::size_t>(inst.K), static_cast<std::size_t>(inst.m), 0) {}

  /// Records period outcome; `decision` is a resource index or -1 (reject).
  void record(const ArrivalView& arrival, int decision) {
    if (arrival.type >= 0) ++arrivals[static_cast<std::size_t>(arrival.type)];
    if (decision >= 0) {
      ++by_resource[static_cast<std::size_t>(decision)];
      if (arrival.type >= 0) {
        ++by_type(static_cast<std::size_t>(arrival.type), static_cast<std::size_t>(decision));
      } else {
        continuous_assignment_cost += arrival.costs[static_cast<std::size_t>(decision)];
      }
    }
    ++periods;
  }

  void close_epoch() {
    if (epochs_closed >= static_cast<int>(snapshots.rows())) throw StructuralError("all epochs already closed");
    auto row = snapshots.row(static_cast<std::size_t>(epochs_closed));
    std::copy(by_resource.begin(), by_resource.end(), row.begin());
    ++epochs_closed;
  }
};

struct CostBreakdown {
  double assignment = 0.0;
  double deviation = 0.0;
  double total = 0.0;
};

/// Deviation cost charged at the end of epoch k: (kT/K) * g(Z_i/(kT/K)).
inline double epoch_deviation_cost(const Instance& inst, int k, std::span<const std::int64_t> cumulative) {
  const double s = static_cast<double>(inst.epoch_end(k));
  double out = 0.0;
  for (int i = 0; i < inst.m; ++i) {
    out += s * inst.dev_costs(k, i).eval(static_cast<double>(cumulative[static_cast<std::size_t>(i)]) / s);
  }
  return out;
}

/// Total cost of a finished run: assignment cost plus deviation cost scaled
/// by kT/K at every epoch end.
inline CostBreakdown total_cost(const Instance& inst, const ConsumptionState& state) {
  if (state.epochs_closed != inst.K) throw StructuralError("missing epoch-end consumption snapshot");
  CostBreakdown out;
  for (int j = 0; j < inst.n; ++j)
    for (int i = 0; i < inst.m; ++i)
      out.assignment += inst.costs(j, i) * static_cast<double>(state.by_type(j, i));
  out.assignment += state.continuous_assignment_cost;
  for (int k = 0; k < inst.K; ++k) out.deviation += epoch_deviation_cost(inst, k, state.snapshots.row(k));
  out.total = out.assignment + out.deviation;
  return out;
}

/// Replays a decision sequence into a consumption state.
inline ConsumptionState replay(const Instance& inst, const ArrivalSequence& omega, std::span<const int> decisions) {
  omega.validate(inst);
  if (static_cast<std::int64_t>(decisions.size()) != inst.T) throw StructuralError("one decision per period");
  const auto all = iota_resources(inst.m);
  ConsumptionState state(inst);
  const std::int64_t L = inst.epoch_length();
  for (std::int64_t t = 0; t < inst.T; ++t) {
    const auto view = arrival_at(inst, omega, t, all);
    const int d = decisions[static_cast<std::size_t>(t)];
    if (d >= 0 && std::find(view.feasible.begin(), view.feasible.end(), d) == view.feasible.end())
      throw StructuralError("decision outside the feasible set");
    state.record(view, d);
    if ((t + 1) % L == 0) state.close_epoch();
  }
  return state;
}

// ---------------------------------------------------------------------------
// Run results
// ---------------------------------------------------------------------------

enum class TraceLevel {
  summary,    // consumption + costs only
  decisions,  // + decisions and proxy decisions
  full,       // + dual and idealized-consumption trajectories
};

/// Output of one policy run on one sample path.
struct RunResult {
  std::string policy;
  double eta = 0.0;
  std::vector<int> decisions;  // resource index, -1 = reject

  // Proxy decisions for epochs k'..K-1 made in period t (k = epoch of t) live at
  // proxy[proxy_offset[t] + (k' - k)]. Empty for policies without proxies.
  std::vector<int> proxy;
  std::vector<std::int64_t> proxy_offset;

  // Full trace only: dual matrix in force at period t (after any epoch reset)
  // and the idealized consumption computed in period t, each K*m values per
  // period. Rows of past epochs are NaN in `aux`. `final_duals` holds the
  // duals after the last update.
  std::vector<double> duals;
  std::vector<double> aux;
  std::vector<double> final_duals;

  ConsumptionState state;
  CostBreakdown cost;
  Matrix<double> running_avg;    // K x m, Z_i(kT/K)/(kT/K)
  Matrix<double> abs_deviation;  // K x m, |running_avg - rho|

  int aux_solves = 0;
  int aux_nonconverged = 0;

  [[nodiscard]] bool has_proxies() const noexcept { return !proxy_offset.empty(); }

  [[nodiscard]] int proxy_decision(const Instance& inst, std::int64_t t, int k_prime) const {
    if (!has_proxies()) throw StructuralError("run has no recorded proxy decisions");
    const int k = inst.epoch_of(t);
    if (k_prime < k || k_prime >= inst.K) throw StructuralError("proxy decision requested for a past epoch");
    return proxy[static_cast<std::size_t>(proxy_offset[static_cast<std::size_t>(t)] + (k_prime - k))];
  }

  [[nodiscard]] double dual(const Instance& inst, std::int64_t t, int k, int i) const {
    return duals[static_cast<std::size_t>((t * inst.K + k) * inst.m + i)];
  }
  [[nodiscard]] double aux_value(const Instance& inst, std::int64_t t, int k, int i) const {
    return aux[static_cast<std::size_t>((t * inst.K + k) * inst.m + i)];
  }
};

/// Fills costs and per-epoch metrics from the final consumption state.
inline void finalize(const Instance& inst, RunResult& result) {
  result.cost = total_cost(inst, result.state);
  result.running_avg = Matrix<double>(static_cast<std::size_t>(inst.K), static_cast<std::size_t>(inst.m));
  result.abs_deviation = result.running_avg;
  for (int k = 0; k < inst.K; ++k) {
    const double s = static_cast<double>(inst.epoch_end(k));
    for (int i = 0; i < inst.m; ++i) {
      const double avg = static_cast<double>(result.state.snapshots(k, i)) / s;
      result.running_avg(k, i) = avg;
      result.abs_deviation(k, i) = std::abs(avg - inst.targets(k, i));
    }
  }
}

}  // namespace flowtarget
