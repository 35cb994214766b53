#pragma once

// Instance generators: the synthetic three-epoch family with an impulse in
// the middle epoch, i.i.d. type arrivals, the Gumbel cost model with its
// aggregate "ideal quantity" observations, and the two counterexamples.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowtarget/core.hpp"
#include "flowtarget/rng.hpp"

namespace flowtarget {

// ---------------------------------------------------------------------------
// Synthetic instances
// ---------------------------------------------------------------------------

struct SyntheticParams {
  int m = 3;
  int n = 3;
  int K = 3;
  std::int64_t T = 501;
  double gamma = 1.0;  // impulse level applied to the middle epoch
  double delta = 1.0;  // deviation scalar
  std::uint64_t seed = 0;
  std::uint32_t substream = 0;
};

/// Type j prefers resource j mod m (cost ~ U[-1,-2/3]); other resources cost
/// ~ U[-2/3,0]. Probabilities are normalized U[0,1] draws. A base target
/// varrho ~ U[0.15,0.6] gives rho = varrho/m in every epoch except the middle
/// one, which gets gamma*varrho/m (clipped to 1 with a warning).
inline Instance generate_synthetic(const SyntheticParams& prm, std::vector<std::string>* warnings = nullptr) {
  if (prm.m <= 0 || prm.n <= 0 || prm.K <= 0) throw InvalidInstance("m, n and K must be positive");
  if (prm.T <= 0 || prm.T % prm.K != 0) throw InvalidInstance("T must be a positive multiple of K");
  if (!(prm.gamma >= 0.0) || !(prm.delta >= 0.0)) throw DomainError("gamma and delta must be nonnegative");
  Philox4x32 rng(prm.seed, Stream::instance, prm.substream);
  Instance inst = make_instance(prm.m, prm.n, prm.K, prm.T);
  for (int j = 0; j < prm.n; ++j) {
    for (int i = 0; i < prm.m; ++i) {
      inst.costs(j, i) = i == j % prm.m ? rng.uniform(-1.0, -2.0 / 3.0) : rng.uniform(-2.0 / 3.0, 0.0);
    }
  }
  double total = 0.0;
  for (auto& p : inst.probs) total += (p = rng.uniform());
  if (total <= 0.0) {
    std::fill(inst.probs.begin(), inst.probs.end(), 1.0 / prm.n);
  } else {
    for (auto& p : inst.probs) p /= total;
  }
  const double base = rng.uniform(0.15, 0.6);
  const int middle = prm.K / 2;
  for (int k = 0; k < prm.K; ++k) {
    double rho = base / prm.m;
    if (prm.K > 2 && k == middle) rho *= prm.gamma;
    if (rho > 1.0) {
      if (warnings != nullptr)
        warnings->push_back("impulse target " + std::to_string(rho) + " exceeds 1 in epoch " + std::to_string(k + 1) + "; clipped");
      rho = 1.0;
    }
    for (int i = 0; i < prm.m; ++i) inst.set_deviation(k, i, DeviationCost::absolute(prm.delta, rho));
  }
  inst.validate();
  return inst;
}

// ---------------------------------------------------------------------------
// Counterexamples
// ---------------------------------------------------------------------------

/// One resource, one type with cost -1, two epochs, absolute deviation with
/// targets 0 then 1. Rejecting is myopically optimal in epoch 1 whenever
/// delta > 1, yet the hindsight optimum accepts everything.
inline Instance myopic_failure_instance(std::int64_t T, double delta) {
  Instance inst = make_instance(1, 1, 2, T);
  inst.costs(0, 0) = -1.0;
  inst.probs = {1.0};
  inst.set_deviation(0, 0, DeviationCost::absolute(delta, 0.0));
  inst.set_deviation(1, 0, DeviationCost::absolute(delta, 1.0));
  inst.validate();
  return inst;
}

/// One resource, one zero-cost type, two epochs with absolute deviation
/// around rho1 and rho2.
inline Instance naive_failure_instance(std::int64_t T, double rho1, double rho2, double delta) {
  Instance inst = make_instance(1, 1, 2, T);
  inst.costs(0, 0) = 0.0;
  inst.probs = {1.0};
  inst.set_deviation(0, 0, DeviationCost::absolute(delta, rho1));
  inst.set_deviation(1, 0, DeviationCost::absolute(delta, rho2));
  inst.validate();
  return inst;
}

// ---------------------------------------------------------------------------
// Arrivals
// ---------------------------------------------------------------------------

inline int draw_type(Philox4x32& rng, const std::vector<double>& probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    acc += probs[j];
    if (u < acc) return static_cast<int>(j);
  }
  // Rounding left u above the final partial sum: last type with mass.
  for (std::size_t j = probs.size(); j-- > 0;)
    if (probs[j] > 0.0) return static_cast<int>(j);
  return 0;
}

/// T i.i.d. type draws from the instance's probabilities.
inline ArrivalSequence sample_arrivals(const Instance& inst, std::uint64_t seed, std::uint32_t substream = 0) {
  if (inst.mode != ArrivalMode::discrete) throw DomainError("type sampling needs a discrete instance");
  Philox4x32 rng(seed, Stream::arrivals, substream);
  ArrivalSequence omega;
  omega.mode = ArrivalMode::discrete;
  omega.seed = seed;
  omega.stream = "arrivals/" + std::to_string(substream);
  omega.types.resize(static_cast<std::size_t>(inst.T));
  for (auto& j : omega.types) j = draw_type(rng, inst.probs);
  return omega;
}

/// Gumbel cost model: an arrival of type j has cost c_ji - eps_i for resource
/// i and -eps_0 for the outside option, eps standard Gumbel. Costs are stored
/// relative to the outside option, so rejecting costs 0 and the probability
/// that resource i is the cheapest option is the soft-min
/// e^{-c_ji} / (1 + sum_i' e^{-c_ji'}).
struct GumbelCostModel {
  Matrix<double> locations;  // n x m
  std::vector<double> probs;  // n
  double lambda = 1.0;        // Poisson arrivals per observation interval

  [[nodiscard]] int m() const noexcept { return static_cast<int>(locations.cols()); }
  [[nodiscard]] int n() const noexcept { return static_cast<int>(locations.rows()); }

  static GumbelCostModel single_type(std::vector<double> c, double lambda) {
    GumbelCostModel g;
    g.locations = Matrix<double>(1, c.size());
    for (std::size_t i = 0; i < c.size(); ++i) g.locations(0, i) = c[i];
    g.probs = {1.0};
    g.lambda = lambda;
    return g;
  }

  void validate() const {
    if (locations.rows() == 0 || locations.cols() == 0) throw InvalidInstance("Gumbel model needs locations");
    if (probs.size() != locations.rows()) throw InvalidInstance("one probability per type");
    double s = 0.0;
    for (double p : probs) s += p;
    if (std::abs(s - 1.0) > 1e-12) throw InvalidInstance("type probabilities must sum to 1");
    if (!(lambda > 0.0)) throw InvalidInstance("Poisson rate must be positive");
  }

  /// Realized costs of one arrival relative to the outside option.
  void draw(Philox4x32& rng, std::span<double> out) const {
    const int j = n() == 1 ? 0 : draw_type(rng, probs);
    const double outside = -rng.gumbel();
    for (int i = 0; i < m(); ++i) out[static_cast<std::size_t>(i)] = locations(j, i) - rng.gumbel() - outside;
  }
};

inline ArrivalSequence sample_gumbel_arrivals(const GumbelCostModel& model, std::int64_t T, std::uint64_t seed,
                                              std::uint32_t substream = 0) {
  model.validate();
  Philox4x32 rng(seed, Stream::arrivals, substream);
  ArrivalSequence omega;
  omega.mode = ArrivalMode::continuous;
  omega.seed = seed;
  omega.stream = "arrivals/" + std::to_string(substream);
  omega.costs = Matrix<double>(static_cast<std::size_t>(T), static_cast<std::size_t>(model.m()));
  for (std::int64_t t = 0; t < T; ++t) model.draw(rng, omega.costs.row(static_cast<std::size_t>(t)));
  return omega;
}

/// Continuous-mode instance shell matching a Gumbel model.
inline Instance continuous_instance(int m, int K, std::int64_t T) {
  Instance inst;
  inst.m = m;
  inst.n = 0;
  inst.K = K;
  inst.T = T;
  inst.mode = ArrivalMode::continuous;
  inst.targets = Matrix<double>(static_cast<std::size_t>(K), static_cast<std::size_t>(m), 0.0);
  inst.dev_costs = Matrix<DeviationCost>(static_cast<std::size_t>(K), static_cast<std::size_t>(m));
  return inst;
}

// ---------------------------------------------------------------------------
// Aggregate observations
// ---------------------------------------------------------------------------

/// Per-interval counts of arrivals whose cheapest option is each resource,
/// plus those for which the outside option is cheapest.
struct AggregateObservation {
  Matrix<std::int64_t> q;             // intervals x m
  std::vector<std::int64_t> outside;  // intervals

  [[nodiscard]] std::size_t intervals() const noexcept { return q.rows(); }
  [[nodiscard]] int m() const noexcept { return static_cast<int>(q.cols()); }
};

/// Cheapest option for one cost vector: lowest-index minimizer, and the
/// outside option (cost 0) unless some resource is strictly cheaper.
inline int cheapest_option(std::span<const double> costs) {
  int best = -1;
  double best_value = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    if (costs[i] < best_value) {
      best_value = costs[i];
      best = static_cast<int>(i);
    }
  }
  return best;
}

/// Ideal quantities from realized costs; each matrix holds one interval's arrivals.
inline AggregateObservation ideal_quantities(const std::vector<Matrix<double>>& intervals, int m) {
  AggregateObservation obs;
  obs.q = Matrix<std::int64_t>(intervals.size(), static_cast<std::size_t>(m), 0);
  obs.outside.assign(intervals.size(), 0);
  for (std::size_t t = 0; t < intervals.size(); ++t) {
    for (std::size_t r = 0; r < intervals[t].rows(); ++r) {
      const int i = cheapest_option(intervals[t].row(r));
      if (i < 0) {
        ++obs.outside[t];
      } else {
        ++obs.q(t, static_cast<std::size_t>(i));
      }
    }
  }
  return obs;
}

/// Ideal quantities from per-interval type counts (intervals x n) and fixed type costs.
inline AggregateObservation ideal_quantities(const Matrix<std::int64_t>& type_counts, const Matrix<double>& costs) {
  AggregateObservation obs;
  const std::size_t m = costs.cols();
  obs.q = Matrix<std::int64_t>(type_counts.rows(), m, 0);
  obs.outside.assign(type_counts.rows(), 0);
  for (std::size_t t = 0; t < type_counts.rows(); ++t) {
    for (std::size_t j = 0; j < type_counts.cols(); ++j) {
      const int i = cheapest_option(costs.row(j));
      if (i < 0) {
        obs.outside[t] += type_counts(t, j);
      } else {
        obs.q(t, static_cast<std::size_t>(i)) += type_counts(t, j);
      }
    }
  }
  return obs;
}

/// Poisson(lambda) arrivals per interval with Gumbel costs, reduced to ideal quantities.
inline AggregateObservation sample_observations(const GumbelCostModel& model, std::size_t intervals, std::uint64_t seed) {
  model.validate();
  Philox4x32 rng(seed, Stream::observations);
  std::poisson_distribution<std::int64_t> arrivals(model.lambda);
  AggregateObservation obs;
  obs.q = Matrix<std::int64_t>(intervals, static_cast<std::size_t>(model.m()), 0);
  obs.outside.assign(intervals, 0);
  std::vector<double> c(static_cast<std::size_t>(model.m()));
  for (std::size_t t = 0; t < intervals; ++t) {
    const std::int64_t N = arrivals(rng);
    for (std::int64_t a = 0; a < N; ++a) {
      model.draw(rng, c);
      const int i = cheapest_option(c);
      if (i < 0) {
        ++obs.outside[t];
      } else {
        ++obs.q(t, static_cast<std::size_t>(i));
      }
    }
  }
  return obs;
}

}  // namespace flowtarget
