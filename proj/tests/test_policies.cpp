#include <gtest/gtest.h>

#include <cmath>

#include "flowtarget/instances.hpp"
#include "flowtarget/oracle.hpp"
#include "flowtarget/policies.hpp"
#include "support.hpp"

using namespace flowtarget;

namespace {

std::vector<int> both{0, 1};

double fraction_accepted(const RunResult& r, std::int64_t from, std::int64_t to) {
  double acc = 0.0;
  for (std::int64_t t = from; t < to; ++t) acc += r.decisions[static_cast<std::size_t>(t)] >= 0 ? 1.0 : 0.0;
  return acc / static_cast<double>(to - from);
}

ArrivalSequence single_type_path(std::int64_t T) {
  ArrivalSequence omega;
  omega.types.assign(static_cast<std::size_t>(T), 0);
  return omega;
}

Instance single_epoch_instance(std::int64_t T, double cost, const DeviationCost& g) {
  auto inst = make_instance(1, 1, 1, T);
  inst.costs(0, 0) = cost;
  inst.set_deviation(0, 0, g);
  return inst;
}

}  // namespace

TEST(ProxyAssign, SpecExamples) {
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_EQ(proxy_assign(std::vector<double>{0.5, 0.3}, both, zero), -1);
  EXPECT_EQ(proxy_assign(std::vector<double>{-1.0, -0.5}, both, zero), 0);
  EXPECT_EQ(proxy_assign(std::vector<double>{0.5, 0.3}, both, std::vector<double>{0.6, 0.2}), 0);
}

TEST(ProxyAssign, TieRules) {
  const std::vector<double> zero{0.0, 0.0};
  const std::vector<double> c{0.0, 0.0};
  EXPECT_EQ(proxy_assign(c, both, zero), 0);
  EXPECT_EQ(proxy_assign(c, both, zero, TieRule::prefer_reject), -1);
  EXPECT_EQ(proxy_assign(std::vector<double>{-1.0, -1.0}, both, zero), 0);
  EXPECT_EQ(proxy_assign(std::vector<double>{-1.0, -1.0}, std::vector<int>{1}, zero), 1);
  EXPECT_EQ(proxy_assign(std::vector<double>{-1.0, -1.0}, std::vector<int>{}, zero), -1);
}

TEST(ProxyAssign, MatchesEnumeration) {
  ftest::Rng rng(30);
  for (int rep = 0; rep < 2000; ++rep) {
    const int m = ftest::pick(rng, 1, 4);
    std::vector<double> c(static_cast<std::size_t>(m)), mu(static_cast<std::size_t>(m));
    std::vector<int> S;
    for (int i = 0; i < m; ++i) {
      c[static_cast<std::size_t>(i)] = ftest::unif(rng, -1, 1);
      mu[static_cast<std::size_t>(i)] = ftest::unif(rng, -1, 1);
      if (ftest::unif(rng, 0, 1) < 0.7) S.push_back(i);
    }
    int best = -1;
    double bv = 0.0;
    for (int i : S) {
      const double v = c[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(i)];
      if (v < bv) {
        bv = v;
        best = i;
      }
    }
    EXPECT_EQ(proxy_assign(c, S, mu), best);
  }
}

TEST(OgdUpdate, Examples) {
  EXPECT_DOUBLE_EQ(ogd_update(std::vector<double>{0.0}, std::vector<double>{0.5}, std::vector<double>{1.0}, 0.1)[0], -0.05);
  const std::vector<double> mu{0.3, -2.0};
  EXPECT_EQ(ogd_update(mu, std::vector<double>{0.1, 0.9}, std::vector<double>{1.0, 0.0}, 0.0), mu);
  ftest::Rng rng(31);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> m(3), a(3), x(3);
    for (int i = 0; i < 3; ++i) {
      m[static_cast<std::size_t>(i)] = ftest::unif(rng, -2, 2);
      a[static_cast<std::size_t>(i)] = ftest::unif(rng, 0, 1);
      x[static_cast<std::size_t>(i)] = ftest::pick(rng, 0, 1);
    }
    const double eta = ftest::unif(rng, 0, 1);
    const auto out = ogd_update(m, a, x, eta);
    for (int i = 0; i < 3; ++i) {
      const auto q = static_cast<std::size_t>(i);
      EXPECT_EQ(out[q], m[q] + eta * (a[q] - x[q]));
    }
  }
}

TEST(IdealizedConsumption, SingleEpochExamples) {
  const auto inst = single_epoch_instance(10, 0.0, DeviationCost::absolute(1.0, 0.6));
  Matrix<double> mu(1, 1, 0.5);
  const std::vector<double> prior{0.0};
  EXPECT_NEAR(idealized_consumption(inst, 0, mu, prior).a(0, 0), 0.6, 1e-4);
  mu(0, 0) = 2.0;
  EXPECT_NEAR(idealized_consumption(inst, 0, mu, prior).a(0, 0), 0.0, 1e-12);
}

TEST(IdealizedConsumption, ZeroCostsFlat) {
  auto inst = make_instance(2, 1, 3, 9);
  Matrix<double> mu(3, 2, 0.0);
  const std::vector<double> prior{1.0, 2.0};
  const auto ic = idealized_consumption(inst, 1, mu, prior);
  ASSERT_EQ(ic.a.rows(), 2u);
  for (int i = 0; i < 2; ++i) {
    const auto f = idealized_objective(inst, 1, std::vector<double>{0.0, 0.0}, prior[static_cast<std::size_t>(i)], i);
    EXPECT_EQ(f.value({ic.a(0, i), ic.a(1, i)}), 0.0);
  }
}

TEST(IdealizedConsumption, MatchesGridOracle) {
  // Two remaining epochs, random prior and prices: the joint box problem
  // against an independent grid search written from the objective's definition.
  ftest::Rng rng(32);
  for (int rep = 0; rep < 25; ++rep) {
    auto inst = make_instance(1, 1, 3, 30);
    for (int k = 0; k < 3; ++k) inst.set_deviation(k, 0, DeviationCost::under_over(ftest::unif(rng, 0, 3), ftest::unif(rng, 0, 3), ftest::unif(rng, 0, 1)));
    const double L = 10.0;
    const double prior = std::floor(ftest::unif(rng, 0, 10.99));
    Matrix<double> mu(3, 1);
    for (auto& v : mu.data()) v = ftest::unif(rng, -2, 2);
    const auto ic = idealized_consumption(inst, 1, mu, std::vector<double>{prior});
    auto obj = [&](double a1, double a2) {
      double v = mu(1, 0) * a1 + mu(2, 0) * a2;
      v += 2.0 * ftest::ref_deviation(inst.dev_costs(1, 0), std::clamp(prior / (2 * L) + a1 / 2.0, 0.0, 1.0));
      v += 3.0 * ftest::ref_deviation(inst.dev_costs(2, 0), std::clamp(prior / (3 * L) + (a1 + a2) / 3.0, 0.0, 1.0));
      return v;
    };
    double best = 1e300;
    for (int p = 0; p <= 1000; ++p)
      for (int q = 0; q <= 1000; ++q) best = std::min(best, obj(p * 1e-3, q * 1e-3));
    EXPECT_LE(obj(ic.a(0, 0), ic.a(1, 0)), best + 1e-9) << "rep " << rep;
    EXPECT_GE(obj(ic.a(0, 0), ic.a(1, 0)), best - 1e-2);
  }
}

TEST(IdealizedConsumption, PriorAboveElapsedIsDomainError) {
  const auto inst = make_instance(1, 1, 2, 10);
  Matrix<double> mu(2, 1, 0.0);
  EXPECT_THROW((void)idealized_consumption(inst, 1, mu, std::vector<double>{6.0}), DomainError);
}

TEST(ProxyDgd, KEqualsOneMatchesSingleEpoch) {
  ftest::Rng rng(33);
  ftest::Shape s{3, 3, 1, 300, true, true};
  for (int rep = 0; rep < 20; ++rep) {
    const auto inst = ftest::random_instance(rng, s);
    const auto omega = ftest::random_arrivals(rng, inst);
    PolicyConfig cfg;
    cfg.eta_mult = ftest::unif(rng, 0.2, 3.0);
    const auto a = run_proxy_dual_gd(inst, omega, cfg);
    const auto b = run_single_epoch_dgd(inst, omega, cfg);
    const auto c = run_naive_primal_dual(inst, omega, cfg);
    EXPECT_EQ(a.decisions, b.decisions) << "rep " << rep;
    EXPECT_EQ(c.decisions, b.decisions) << "rep " << rep;
    EXPECT_DOUBLE_EQ(a.cost.total, b.cost.total);
  }
}

TEST(ProxyDgd, ZeroDeviationPositiveCostsRejectsAll) {
  ftest::Rng rng(34);
  ftest::Shape s;
  auto inst = ftest::random_instance(rng, s);
  for (auto& c : inst.costs.data()) c = std::abs(c) + 0.01;
  for (int k = 0; k < inst.K; ++k)
    for (int i = 0; i < inst.m; ++i) inst.set_deviation(k, i, DeviationCost::zero());
  const auto omega = ftest::random_arrivals(rng, inst);
  const auto r = run_proxy_dual_gd(inst, omega);
  for (int d : r.decisions) EXPECT_EQ(d, -1);
  EXPECT_EQ(r.cost.total, 0.0);
}

TEST(ProxyDgd, SecondCounterexampleFirstEpochFraction) {
  const std::int64_t T = 4000;
  const auto inst = naive_failure_instance(T, 0.3, 0.4, 10.0);
  const auto omega = single_type_path(T);
  const auto r = run_proxy_dual_gd(inst, omega);
  const std::int64_t L = T / 2, burn = T / 20;
  EXPECT_NEAR(fraction_accepted(r, burn, L), 0.30, 0.03);
}

TEST(ProxyDgd, DualTelescopingAndReset) {
  ftest::Rng rng(35);
  ftest::Shape s{3, 3, 4, 200, true, true};
  for (int rep = 0; rep < 10; ++rep) {
    const auto inst = ftest::random_instance(rng, s);
    const auto omega = ftest::random_arrivals(rng, inst);
    PolicyConfig cfg;
    cfg.trace = TraceLevel::full;
    cfg.mu1 = Matrix<double>(static_cast<std::size_t>(inst.K), static_cast<std::size_t>(inst.m));
    for (auto& v : cfg.mu1.data()) v = ftest::unif(rng, -1, 1);
    const auto r = run_proxy_dual_gd(inst, omega, cfg);
    const std::int64_t L = inst.epoch_length();
    for (std::int64_t t = 0; t < inst.T; ++t) {
      const int k = inst.epoch_of(t);
      for (int kp = 0; kp < inst.K; ++kp)
        for (int i = 0; i < inst.m; ++i) {
          if (t % L == 0 && kp >= k) ASSERT_EQ(r.dual(inst, t, kp, i), cfg.mu1(kp, i));
          if (kp < k) continue;
          const double next = t + 1 < inst.T ? r.dual(inst, t + 1, kp, i)
                                             : r.final_duals[static_cast<std::size_t>(kp * inst.m + i)];
          if ((t + 1) % L == 0 && kp > k && t + 1 < inst.T) continue;  // reset at the next period
          const double x = r.proxy_decision(inst, t, kp) == i ? 1.0 : 0.0;
          ASSERT_EQ(next, r.dual(inst, t, kp, i) + r.eta * (r.aux_value(inst, t, kp, i) - x));
        }
    }
  }
}

TEST(ProxyDgd, DecisionsFeasibleAndDeterministic) {
  ftest::Rng rng(36);
  ftest::Shape s;
  for (int rep = 0; rep < 20; ++rep) {
    const auto inst = ftest::random_instance(rng, s);
    const auto omega = ftest::random_arrivals(rng, inst);
    for (auto kind : {PolicyKind::proxy_dgd, PolicyKind::me, PolicyKind::smart_me, PolicyKind::naive_pd, PolicyKind::greedy}) {
      const auto a = run_policy(kind, inst, omega);
      const auto b = run_policy(kind, inst, omega);
      EXPECT_EQ(a.decisions, b.decisions);
      EXPECT_EQ(a.cost.total, b.cost.total);
      for (std::int64_t t = 0; t < inst.T; ++t) {
        const int d = a.decisions[static_cast<std::size_t>(t)];
        if (d >= 0) EXPECT_TRUE(inst.feasible(omega.types[static_cast<std::size_t>(t)], d));
      }
      EXPECT_NEAR(a.cost.total, ftest::ref_total_cost(inst, omega, a.decisions), 1e-9 * std::max(1.0, std::abs(a.cost.total)));
    }
  }
}

TEST(ProxyDgd, CostDecompositionIdentity) {
  ftest::Rng rng(37);
  ftest::Shape s{3, 3, 4, 600, true, true};
  for (int rep = 0; rep < 30; ++rep) {
    const auto inst = ftest::random_instance(rng, s);
    const auto omega = ftest::random_arrivals(rng, inst);
    const auto r = run_proxy_dual_gd(inst, omega);
    const auto dec = proxy_decomposition(inst, omega, r);
    EXPECT_NEAR(dec.reconstructed(), r.cost.total, 1e-9 * std::max(1.0, std::abs(r.cost.total))) << "rep " << rep;
  }
}

TEST(SingleEpoch, LargePenaltyTracksTarget) {
  const std::int64_t T = 2000;
  const auto inst = single_epoch_instance(T, 0.0, DeviationCost::absolute(10.0, 0.5));
  const auto r = run_single_epoch_dgd(inst, single_type_path(T));
  EXPECT_NEAR(fraction_accepted(r, 0, T), 0.5, 0.05);
}

TEST(SingleEpoch, ZeroPenaltyIsGreedy) {
  ftest::Rng rng(38);
  ftest::Shape s{3, 3, 1, 200, false, false};
  auto inst = ftest::random_instance(rng, s);
  for (int i = 0; i < inst.m; ++i) inst.set_deviation(0, i, DeviationCost::absolute(0.0, inst.targets(0, i)));
  const auto omega = ftest::random_arrivals(rng, inst);
  const auto r = run_single_epoch_dgd(inst, omega);
  const auto g = run_greedy(inst, omega);
  for (std::int64_t t = 0; t < inst.T; ++t) {
    const auto j = static_cast<std::size_t>(omega.types[static_cast<std::size_t>(t)]);
    // Exact zero-cost ties aside, the two coincide.
    if (r.decisions[static_cast<std::size_t>(t)] != g.decisions[static_cast<std::size_t>(t)]) {
      const int d = r.decisions[static_cast<std::size_t>(t)];
      ASSERT_TRUE(d >= 0 && inst.costs(j, static_cast<std::size_t>(d)) == 0.0);
    }
  }
  EXPECT_NEAR(r.cost.total, g.cost.total, 1e-12);
}

TEST(SingleEpoch, RecoversFromNegativeInitialDuals) {
  // Climbing back from mu = -20 takes about 20 / eta periods; judge the tail.
  const std::int64_t T = 4000;
  const auto inst = single_epoch_instance(T, -0.5, DeviationCost::absolute(5.0, 0.4));
  const auto omega = single_type_path(T);
  PolicyConfig cfg;
  cfg.mu1 = Matrix<double>(1, 1, -20.0);
  const auto r = run_single_epoch_dgd(inst, omega, cfg);
  EXPECT_EQ(r.decisions.front(), -1);
  const auto off = hindsight_optimum(inst, omega);
  EXPECT_NEAR(fraction_accepted(r, T / 2, T), off.consumption(0, 0) / static_cast<double>(T), 0.05);
}

TEST(SingleEpoch, RequiresOneEpoch) {
  const auto inst = make_instance(1, 1, 2, 4);
  EXPECT_THROW((void)run_single_epoch_dgd(inst, single_type_path(4)), DomainError);
}

TEST(Myopic, EpochTargets) {
  auto inst = make_instance(1, 1, 2, 10);
  inst.set_deviation(0, 0, DeviationCost::absolute(1.0, 0.25));
  inst.set_deviation(1, 0, DeviationCost::absolute(1.0, 0.5));
  EXPECT_DOUBLE_EQ(myopic_target(inst, MyopicVariant::me, 1, 0, 123.0), 0.75);
  EXPECT_DOUBLE_EQ(myopic_target(inst, MyopicVariant::smart_me, 1, 0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(myopic_target(inst, MyopicVariant::me, 0, 0, 0.0), 0.25);
  // Not clamped to [0,1].
  inst.set_deviation(1, 0, DeviationCost::absolute(1.0, 0.9));
  EXPECT_DOUBLE_EQ(myopic_target(inst, MyopicVariant::me, 1, 0, 0.0), 1.55);
  EXPECT_DOUBLE_EQ(myopic_target(inst, MyopicVariant::smart_me, 1, 0, 5.0), 0.8);
}

TEST(Myopic, FirstCounterexampleSmartMe) {
  const std::int64_t T = 2000;
  const auto inst = myopic_failure_instance(T, 2.0);
  const auto omega = single_type_path(T);
  const auto r = run_myopic(inst, omega, {}, MyopicVariant::smart_me);
  EXPECT_NEAR(fraction_accepted(r, 0, T / 2), 0.0, 0.05);
  const auto off = hindsight_optimum(inst, omega);
  EXPECT_GE(r.cost.total, off.value + 0.4 * T);
}

TEST(NaivePd, SecondCounterexampleAverages) {
  const std::int64_t T = 4000;
  const auto inst = naive_failure_instance(T, 0.3, 0.4, 10.0);
  const auto r = run_naive_primal_dual(inst, single_type_path(T));
  const std::int64_t L = T / 2, burn = T / 20;
  EXPECT_NEAR(fraction_accepted(r, burn, L), 0.35, 0.03);
}

TEST(NaivePd, PositiveCostsZeroDeviationRejectsAll) {
  auto inst = make_instance(2, 2, 3, 30);
  inst.costs(0, 0) = 0.4;
  inst.costs(0, 1) = 0.1;
  inst.costs(1, 0) = 0.2;
  inst.costs(1, 1) = 0.7;
  ftest::Rng rng(39);
  const auto omega = ftest::random_arrivals(rng, inst);
  const auto r = run_naive_primal_dual(inst, omega);
  for (int d : r.decisions) EXPECT_EQ(d, -1);
  EXPECT_EQ(r.cost.total, 0.0);
}

TEST(Greedy, PicksCheapestNegative) {
  auto inst = make_instance(2, 3, 1, 3);
  inst.costs(0, 0) = 0.5;
  inst.costs(0, 1) = 0.3;
  inst.costs(1, 0) = -1.0;
  inst.costs(1, 1) = -0.5;
  inst.costs(2, 0) = -0.2;
  inst.costs(2, 1) = -0.7;
  ArrivalSequence omega;
  omega.types = {0, 1, 2};
  EXPECT_EQ(run_greedy(inst, omega).decisions, (std::vector<int>{-1, 0, 1}));
}

TEST(Policies, NamesRoundTrip) {
  for (auto p : {PolicyKind::proxy_dgd, PolicyKind::single_epoch_dgd, PolicyKind::me, PolicyKind::smart_me, PolicyKind::naive_pd,
                 PolicyKind::greedy})
    EXPECT_EQ(parse_policy(policy_name(p)), p);
  EXPECT_THROW((void)parse_policy("nope"), std::invalid_argument);
}

TEST(Policies, ConfigValidation) {
  const auto inst = make_instance(1, 1, 2, 4);
  PolicyConfig cfg;
  cfg.eta = -1.0;
  EXPECT_THROW((void)run_proxy_dual_gd(inst, single_type_path(4), cfg), DomainError);
  cfg.eta.reset();
  cfg.mu1 = Matrix<double>(1, 1, 0.0);
  EXPECT_THROW((void)run_proxy_dual_gd(inst, single_type_path(4), cfg), StructuralError);
  EXPECT_DOUBLE_EQ(resolve_eta(inst, {}), std::sqrt(2.0 / 4.0));
}
