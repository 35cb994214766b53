#pragma once

// Reductions from epochs of unequal length to the stationary model.
//
// A profile l (sum 1) splits the horizon into epochs of l_k T arrivals. With
// per-arrival targets the cost charges l_{<=k} T * g_k(Z(l_{<=k} T) / l_{<=k} T);
// cutting the horizon into gcd-sized epochs and giving the new epochs that do
// not end an original epoch a zero deviation cost yields an equivalent
// stationary instance. With per-period targets the charge is
// (kT/K) g_k(Z(l_{<=k} T) / (kT/K)); rescaling g first turns it into the
// per-arrival form.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "flowtarget/core.hpp"

namespace flowtarget {

enum class TargetMode { per_arrival, per_period };

struct NonstatProfile {
  std::vector<double> l;
  TargetMode mode = TargetMode::per_arrival;
};

/// Cumulative epoch ends l_{<=k} T as integers; throws unless every l_k T is integral.
inline std::vector<std::int64_t> profile_boundaries(const NonstatProfile& prof, std::int64_t T) {
  if (prof.l.empty()) throw DomainError("empty profile");
  std::vector<std::int64_t> ends;
  double total = 0.0;
  std::int64_t cum = 0;
  for (double lk : prof.l) {
    if (!(lk > 0.0 && lk < 1.0 + 1e-12)) throw DomainError("profile entries must lie in (0,1]");
    const double len = lk * static_cast<double>(T);
    const double rounded = std::round(len);
    if (std::abs(len - rounded) > 1e-9 * std::max(1.0, len)) throw DomainError("l_k T must be integral");
    cum += static_cast<std::int64_t>(rounded);
    ends.push_back(cum);
    total += lk;
  }
  if (std::abs(total - 1.0) > 1e-9 || cum != T) throw DomainError("profile must sum to 1");
  return ends;
}

/// Epoch length l_new T of the stationary instance: the gcd of all l_k T.
inline std::int64_t profile_gcd(const std::vector<std::int64_t>& ends) {
  std::int64_t g = 0;
  std::int64_t prev = 0;
  for (auto e : ends) {
    g = std::gcd(g, e - prev);
    prev = e;
  }
  return g;
}

/// Per-arrival deviation cost equivalent to the per-period cost of epoch k
/// (0-based) ending after `end` arrivals:
/// a -> (1/l_{<=k}) (k/K) g((l_{<=k}/(k/K)) a).
inline DeviationCost per_period_rescale(const DeviationCost& g, int k, int K, std::int64_t end, std::int64_t T) {
  const double frac = static_cast<double>(end) / static_cast<double>(T);  // l_{<=k}
  const double time = static_cast<double>(k + 1) / static_cast<double>(K);  // k/K
  return g.rescaled(time / frac, frac / time);
}

/// Total cost of a decision sequence on a nonstationary instance evaluated
/// directly from its definition. `inst` supplies costs and the K x m
/// deviation matrix; its own T/K epoch structure is ignored.
inline double nonstationary_cost(const Instance& inst, const NonstatProfile& prof, const ArrivalSequence& omega,
                                 std::span<const int> decisions) {
  const auto ends = profile_boundaries(prof, inst.T);
  if (static_cast<int>(ends.size()) != inst.K) throw StructuralError("profile length must equal K");
  if (static_cast<std::int64_t>(decisions.size()) != inst.T) throw StructuralError("one decision per period");
  const auto all = iota_resources(inst.m);
  std::vector<std::int64_t> cum(static_cast<std::size_t>(inst.m), 0);
  double out = 0.0;
  std::size_t next = 0;
  for (std::int64_t t = 0; t < inst.T; ++t) {
    const auto view = arrival_at(inst, omega, t, all);
    const int d = decisions[static_cast<std::size_t>(t)];
    if (d >= 0) {
      out += view.costs[static_cast<std::size_t>(d)];
      ++cum[static_cast<std::size_t>(d)];
    }
    while (next < ends.size() && t + 1 == ends[next]) {
      const int k = static_cast<int>(next);
      const double s = prof.mode == TargetMode::per_arrival
                           ? static_cast<double>(ends[next])
                           : static_cast<double>(k + 1) * static_cast<double>(inst.T) / inst.K;
      for (int i = 0; i < inst.m; ++i)
        out += s * inst.dev_costs(k, i).eval_extended(static_cast<double>(cum[static_cast<std::size_t>(i)]) / s);
      ++next;
    }
  }
  return out;
}

struct TransformResult {
  Instance instance;
  std::vector<int> epoch_map;  // f(k), 1-based, one entry per original epoch
  std::int64_t new_epoch_length = 0;
};

/// Stationary instance with K_new = T / gcd(l_k T) equal epochs. Profiles
/// whose gcd falls below `min_epoch_length` are rejected.
inline TransformResult nonstationary_transform(const Instance& inst, const NonstatProfile& prof,
                                               std::int64_t min_epoch_length = 1) {
  const auto ends = profile_boundaries(prof, inst.T);
  if (static_cast<int>(ends.size()) != inst.K) throw StructuralError("profile length must equal K");
  if (inst.dev_costs.rows() != static_cast<std::size_t>(inst.K)) throw StructuralError("deviation matrix must be K x m");
  const std::int64_t g = profile_gcd(ends);
  if (g < min_epoch_length)
    throw DomainError("profile gcd " + std::to_string(g) + " is below the minimum epoch length " + std::to_string(min_epoch_length));

  TransformResult out;
  out.new_epoch_length = g;
  const int K_new = static_cast<int>(inst.T / g);
  Instance& ni = out.instance;
  ni = inst;
  ni.K = K_new;
  ni.targets = Matrix<double>(static_cast<std::size_t>(K_new), static_cast<std::size_t>(inst.m), 0.0);
  ni.dev_costs = Matrix<DeviationCost>(static_cast<std::size_t>(K_new), static_cast<std::size_t>(inst.m));
  ni.extended_targets = inst.extended_targets || prof.mode == TargetMode::per_period;
  for (int k = 0; k < inst.K; ++k) {
    const int f = static_cast<int>(ends[static_cast<std::size_t>(k)] / g);
    out.epoch_map.push_back(f);
    for (int i = 0; i < inst.m; ++i) {
      DeviationCost dc = inst.dev_costs(k, i);
      if (prof.mode == TargetMode::per_period) dc = per_period_rescale(dc, k, inst.K, ends[static_cast<std::size_t>(k)], inst.T);
      ni.set_deviation(f - 1, i, dc);
    }
  }
  ni.validate();
  return out;
}

}  // namespace flowtarget
