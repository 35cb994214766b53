#include <gtest/gtest.h>

#include <cmath>

#include "flowtarget/instances.hpp"
#include "flowtarget/oracle.hpp"
#include "flowtarget/policies.hpp"
#include "support.hpp"

using namespace flowtarget;

namespace {

ArrivalSequence single_type_path(std::int64_t T) {
  ArrivalSequence omega;
  omega.types.assign(static_cast<std::size_t>(T), 0);
  return omega;
}

void expect_valid_solution(const Instance& inst, const ArrivalSequence& omega, const OfflineSolution& sol) {
  const auto counts = epoch_counts(inst, omega);
  for (int j = 0; j < inst.n; ++j)
    for (int e = 0; e < sol.epochs; ++e) {
      double assigned = 0.0;
      for (int i = 0; i < inst.m; ++i) {
        const double z = sol.z(j, i, e);
        EXPECT_GE(z, -1e-9);
        if (!inst.feasible(j, i)) EXPECT_NEAR(z, 0.0, 1e-9);
        assigned += z;
      }
      EXPECT_LE(assigned, counts(j, sol.first_epoch + e) + 1e-9);
    }
}

}  // namespace

TEST(Hindsight, FirstCounterexampleClosedForm) {
  for (std::int64_t T : {2, 10, 100, 2000}) {
    const auto inst = myopic_failure_instance(T, 2.0);
    const auto sol = hindsight_optimum(inst, single_type_path(T));
    EXPECT_NEAR(sol.value, -static_cast<double>(T) + 2.0 * T / 2.0, 1e-9 * T);
    EXPECT_EQ(sol.gap, 0.0);
  }
}

TEST(Hindsight, ZeroDeviationIsGreedy) {
  ftest::Rng rng(40);
  ftest::Shape s;
  for (int rep = 0; rep < 30; ++rep) {
    auto inst = ftest::random_instance(rng, s);
    for (int k = 0; k < inst.K; ++k)
      for (int i = 0; i < inst.m; ++i) inst.set_deviation(k, i, DeviationCost::zero());
    const auto omega = ftest::random_arrivals(rng, inst);
    double expect = 0.0;
    for (int t : omega.types) {
      double best = 0.0;
      for (int i : inst.feasible_sets[static_cast<std::size_t>(t)])
        best = std::min(best, inst.costs(static_cast<std::size_t>(t), static_cast<std::size_t>(i)));
      expect += best;
    }
    for (auto backend : {OracleBackend::exact_lp, OracleBackend::dual_subgradient})
      EXPECT_NEAR(hindsight_optimum(inst, omega, backend).value, expect, 1e-8 * std::max(1.0, std::abs(expect)));
  }
}

TEST(Hindsight, SandwichAgainstBruteForce) {
  ftest::Rng rng(41);
  ftest::Shape s{2, 2, 2, 6, false, true};
  for (int rep = 0; rep < 60; ++rep) {
    const auto inst = ftest::random_instance(rng, s);
    const auto omega = ftest::random_arrivals(rng, inst);
    const auto lp = hindsight_optimum(inst, omega, OracleBackend::exact_lp);
    const auto bf = brute_force_offline(inst, omega);
    const double ref = ftest::ref_brute_force(inst, omega);
    EXPECT_NEAR(bf.value, ref, 1e-12);
    EXPECT_LE(lp.value, bf.value + 1e-9);
    EXPECT_LE(bf.value, lp.value + rounding_bound(inst) + 1e-9);
    expect_valid_solution(inst, omega, lp);
  }
}

TEST(Hindsight, BackendsAgreeWithinCertifiedGap) {
  ftest::Rng rng(42);
  ftest::Shape s{3, 3, 3, 60, false, true};
  for (int rep = 0; rep < 40; ++rep) {
    const auto inst = ftest::random_instance(rng, s);
    const auto omega = ftest::random_arrivals(rng, inst);
    const auto lp = hindsight_optimum(inst, omega, OracleBackend::exact_lp);
    for (auto method : {DualMethod::primal_dual, DualMethod::subgradient}) {
      OracleOptions opt;
      opt.dual_method = method;
      const auto ds = hindsight_optimum(inst, omega, OracleBackend::dual_subgradient, opt);
      EXPECT_LE(ds.lower_bound, lp.value + 1e-7 * std::max(1.0, std::abs(lp.value)));
      EXPECT_GE(ds.value, lp.value - 1e-7 * std::max(1.0, std::abs(lp.value)));
      EXPECT_NEAR(ds.gap, ds.value - ds.lower_bound, 1e-12 * std::max(1.0, std::abs(ds.value)));
      expect_valid_solution(inst, omega, ds);
      if (method == DualMethod::primal_dual) EXPECT_LE(ds.gap, 0.01 * std::abs(lp.value) + 1e-6) << "rep " << rep;
    }
  }
}

TEST(Hindsight, DualHandlesSquaredCosts) {
  ftest::Rng rng(43);
  ftest::Shape s{2, 2, 2, 6, true, false};
  int squared_seen = 0;
  for (int rep = 0; rep < 40; ++rep) {
    const auto inst = ftest::random_instance(rng, s);
    if (inst.all_piecewise_linear()) continue;
    ++squared_seen;
    const auto omega = ftest::random_arrivals(rng, inst);
    EXPECT_THROW((void)hindsight_optimum(inst, omega, OracleBackend::exact_lp), UnsupportedFamily);
    const auto ds = hindsight_optimum(inst, omega, OracleBackend::dual_subgradient);
    // Fractional relaxation lower-bounds the integral optimum.
    EXPECT_LE(ds.lower_bound, ftest::ref_brute_force(inst, omega) + 1e-9);
    EXPECT_LE(ds.gap, 0.01 * std::abs(ds.value) + 1e-6);
    EXPECT_EQ(hindsight_optimum(inst, omega, OracleBackend::automatic).backend, "dual-subgradient");
  }
  EXPECT_GT(squared_seen, 5);
}

TEST(Hindsight, ContinuousModeBackendsAgree) {
  const auto model = GumbelCostModel::single_type({-0.3, 0.4}, 1.0);
  auto inst = continuous_instance(2, 2, 20);
  inst.set_deviation(0, 0, DeviationCost::absolute(1.0, 0.3));
  inst.set_deviation(1, 0, DeviationCost::absolute(1.0, 0.5));
  inst.set_deviation(0, 1, DeviationCost::under_over(0.5, 2.0, 0.2));
  inst.set_deviation(1, 1, DeviationCost::under_over(0.5, 2.0, 0.2));
  for (std::uint32_t rep = 0; rep < 5; ++rep) {
    const auto omega = sample_gumbel_arrivals(model, inst.T, 5, rep);
    const auto lp = hindsight_optimum(inst, omega, OracleBackend::exact_lp);
    const auto ds = hindsight_optimum(inst, omega, OracleBackend::dual_subgradient);
    EXPECT_LE(ds.lower_bound, lp.value + 1e-7);
    EXPECT_GE(ds.value, lp.value - 1e-7);
    EXPECT_LE(ds.gap, 0.01 * std::abs(lp.value) + 1e-6);
    // Every policy pays at least the relaxation.
    EXPECT_LE(lp.value, run_proxy_dual_gd(inst, omega).cost.total + 1e-9);
  }
}

TEST(Hindsight, LowerBoundsEveryPolicy) {
  ftest::Rng rng(44);
  ftest::Shape s{3, 3, 4, 400, false, true};
  for (int rep = 0; rep < 20; ++rep) {
    const auto inst = ftest::random_instance(rng, s);
    const auto omega = ftest::random_arrivals(rng, inst);
    const auto off = hindsight_optimum(inst, omega);
    for (auto kind : {PolicyKind::proxy_dgd, PolicyKind::me, PolicyKind::smart_me, PolicyKind::naive_pd, PolicyKind::greedy}) {
      const double v = run_policy(kind, inst, omega).cost.total;
      EXPECT_LE(off.value, v + 1e-7 * std::max(1.0, std::abs(v)));
    }
  }
}

TEST(Myopic, FirstCounterexampleEpochValues) {
  const std::int64_t T = 2000;
  const auto inst = myopic_failure_instance(T, 2.0);
  const auto omega = single_type_path(T);
  const std::vector<double> z{0.0};
  EXPECT_NEAR(myopic_offline(inst, omega, z, 0).value, 0.0, 1e-9);
  EXPECT_NEAR(myopic_offline(inst, omega, z, 1).value, -T / 2.0 + 2.0 * T / 2.0, 1e-9 * T);
}

TEST(Myopic, ZeroDeviationGreedyWithinEpoch) {
  auto inst = make_instance(2, 2, 2, 8);
  inst.costs(0, 0) = -0.4;
  inst.costs(0, 1) = -0.9;
  inst.costs(1, 0) = 0.3;
  inst.costs(1, 1) = 0.1;
  ArrivalSequence omega;
  omega.types = {0, 1, 0, 0, 1, 1, 0, 1};
  EXPECT_NEAR(myopic_offline(inst, omega, {0.0, 0.0}, 0).value, -0.9 * 3, 1e-9);
  EXPECT_NEAR(myopic_offline(inst, omega, {1.0, 2.0}, 1).value, -0.9 * 1, 1e-9);
}

TEST(ProxyOffline, Degeneracies) {
  ftest::Rng rng(45);
  for (int rep = 0; rep < 20; ++rep) {
    ftest::Shape s{2, 3, 3, 30, false, true};
    const auto inst = ftest::random_instance(rng, s);
    const auto omega = ftest::random_arrivals(rng, inst);
    std::vector<double> z(static_cast<std::size_t>(inst.m), 0.0);
    const int last = inst.K - 1;
    for (auto& v : z) v = std::floor(ftest::unif(rng, 0, static_cast<double>(last * inst.epoch_length()) + 0.99));
    EXPECT_NEAR(proxy_offline(inst, omega, z, last).value, myopic_offline(inst, omega, z, last).value, 1e-9);

    ftest::Shape s1{2, 3, 1, 30, false, true};
    const auto one = ftest::random_instance(rng, s1);
    const auto w = ftest::random_arrivals(rng, one);
    EXPECT_NEAR(proxy_offline(one, w, std::vector<double>(static_cast<std::size_t>(one.m), 0.0), 0).value,
                hindsight_optimum(one, w).value, 1e-9);
  }
}

TEST(ProxyOffline, BoundsCumulativeProxyCost) {
  ftest::Rng rng(46);
  ftest::Shape s{2, 2, 3, 90, false, true};
  for (int rep = 0; rep < 15; ++rep) {
    const auto inst = ftest::random_instance(rng, s);
    const auto omega = ftest::random_arrivals(rng, inst);
    const auto run = run_proxy_dual_gd(inst, omega);
    for (int k = 0; k < inst.K; ++k) {
      std::vector<double> z(static_cast<std::size_t>(inst.m), 0.0);
      if (k > 0)
        for (int i = 0; i < inst.m; ++i) z[static_cast<std::size_t>(i)] = static_cast<double>(run.state.snapshots(k - 1, i));
      EXPECT_LE(proxy_offline(inst, omega, z, k).value, cumulative_proxy_cost(inst, omega, run, k) + 1e-9);
    }
  }
}

TEST(ProxyCost, Degeneracies) {
  ftest::Rng rng(47);
  ftest::Shape s{3, 3, 1, 100, true, true};
  const auto inst = ftest::random_instance(rng, s);
  const auto omega = ftest::random_arrivals(rng, inst);
  const auto run = run_proxy_dual_gd(inst, omega);
  EXPECT_NEAR(cumulative_proxy_cost(inst, omega, run, 0), run.cost.total, 1e-9);

  // Positive costs and zero deviation: every proxy rejects.
  auto z = make_instance(2, 1, 3, 9);
  z.costs(0, 0) = 0.5;
  z.costs(0, 1) = 0.2;
  const auto w = single_type_path(9);
  const auto r = run_proxy_dual_gd(z, w);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(cumulative_proxy_cost(z, w, r, k), 0.0);
}

TEST(ProxyCost, MissingTraceIsStructuralError) {
  const auto inst = myopic_failure_instance(4, 2.0);
  const auto omega = single_type_path(4);
  PolicyConfig cfg;
  cfg.trace = TraceLevel::summary;
  const auto run = run_proxy_dual_gd(inst, omega, cfg);
  EXPECT_THROW((void)cumulative_proxy_cost(inst, omega, run, 0), StructuralError);
  EXPECT_THROW((void)proxy_decomposition(inst, omega, run_greedy(inst, omega)), StructuralError);
}

TEST(BruteForce, FirstCounterexample) {
  const auto inst = myopic_failure_instance(4, 2.0);
  const auto bf = brute_force_offline(inst, single_type_path(4));
  EXPECT_NEAR(bf.value, -4.0 + 2.0 * 4 / 2.0, 1e-12);
}

TEST(BruteForce, ZeroDeviationMatchesGreedy) {
  ftest::Rng rng(48);
  ftest::Shape s{2, 2, 2, 8, false, true};
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = ftest::random_instance(rng, s);
    for (int k = 0; k < inst.K; ++k)
      for (int i = 0; i < inst.m; ++i) inst.set_deviation(k, i, DeviationCost::zero());
    const auto omega = ftest::random_arrivals(rng, inst);
    EXPECT_NEAR(brute_force_offline(inst, omega).value, run_greedy(inst, omega).cost.total, 1e-12);
  }
}

TEST(BruteForce, RefusesLargeInstances) {
  const auto inst = myopic_failure_instance(40, 2.0);
  EXPECT_THROW((void)brute_force_offline(inst, single_type_path(40)), DomainError);
}

TEST(Backend, Names) {
  for (auto b : {OracleBackend::exact_lp, OracleBackend::dual_subgradient, OracleBackend::automatic})
    EXPECT_EQ(parse_backend(backend_name(b)), b);
  EXPECT_THROW((void)parse_backend("cplex"), std::invalid_argument);
}
