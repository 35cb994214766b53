#pragma once

// Maximum likelihood estimation of Gumbel location parameters from aggregate
// ideal quantities. Under the soft-min approximation the ideal quantity of
// resource i in an interval is Poisson with rate
//
//   lambda_i = lambda * sum_j p_j e^{-c_ji} / (1 + sum_i' e^{-c_ji'}),
//
// lambda being the mean interval arrival count. The negative log-likelihood
// is minimized by projected gradient descent from random restarts; we scale
// it by 1/(number of intervals) so the step size does not depend on how much
// data there is.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

#include "flowtarget/core.hpp"
#include "flowtarget/instances.hpp"
#include "flowtarget/rng.hpp"

namespace flowtarget {

struct MleParams {
  std::vector<double> p;  // n
  Matrix<double> c;       // n x m
};

struct MleOptions {
  int n_types = 1;
  int restarts = 50;
  int iterations = 10000;
  double step = 0.2;
  double lower = -50.0;
  double upper = 50.0;
  double init_range = 3.0;  // restarts draw c ~ U[-init_range, init_range]
  std::uint64_t seed = 0;
  int threads = 1;
};

struct MleResult {
  MleParams params;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  double lambda = 0.0;
  int best_restart = -1;
  bool degenerate = false;  // no assignments observed
};

/// Sufficient statistics: mean arrival count and mean ideal quantity per resource.
struct MleData {
  double lambda = 0.0;
  std::vector<double> mean_q;
  double intervals = 0.0;
  double sum_log_factorial = 0.0;
};

inline MleData mle_data(const AggregateObservation& obs) {
  if (obs.intervals() == 0) throw DomainError("no observations");
  MleData d;
  d.intervals = static_cast<double>(obs.intervals());
  d.mean_q.assign(static_cast<std::size_t>(obs.m()), 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < obs.intervals(); ++t) {
    total += static_cast<double>(obs.outside[t]);
    for (int i = 0; i < obs.m(); ++i) {
      const auto q = static_cast<double>(obs.q(t, static_cast<std::size_t>(i)));
      total += q;
      d.mean_q[static_cast<std::size_t>(i)] += q;
      d.sum_log_factorial += std::lgamma(q + 1.0);
    }
  }
  d.lambda = total / d.intervals;
  for (auto& q : d.mean_q) q /= d.intervals;
  return d;
}

/// Soft-min choice probabilities s_ji of resource i for type j.
inline Matrix<double> softmin_shares(const Matrix<double>& c) {
  Matrix<double> s(c.rows(), c.cols());
  for (std::size_t j = 0; j < c.rows(); ++j) {
    // Shift by the smallest exponent argument for stability (outside option at 0).
    double shift = 0.0;
    for (std::size_t i = 0; i < c.cols(); ++i) shift = std::max(shift, -c(j, i));
    double denom = std::exp(-shift);
    for (std::size_t i = 0; i < c.cols(); ++i) denom += (s(j, i) = std::exp(-c(j, i) - shift));
    for (std::size_t i = 0; i < c.cols(); ++i) s(j, i) /= denom;
  }
  return s;
}

inline std::vector<double> softmin_rates(const MleParams& prm, double lambda) {
  const auto s = softmin_shares(prm.c);
  std::vector<double> rates(prm.c.cols(), 0.0);
  for (std::size_t j = 0; j < prm.c.rows(); ++j)
    for (std::size_t i = 0; i < prm.c.cols(); ++i) rates[i] += lambda * prm.p[j] * s(j, i);
  return rates;
}

/// Average negative log-likelihood (constant terms dropped).
inline double mle_objective(const MleParams& prm, const MleData& d) {
  const auto rates = softmin_rates(prm, d.lambda);
  double f = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    f += rates[i];
    if (d.mean_q[i] > 0.0) f -= d.mean_q[i] * std::log(rates[i]);
  }
  return f;
}

/// Full log-likelihood of the observations.
inline double log_likelihood(const MleParams& prm, const MleData& d) {
  return -d.intervals * mle_objective(prm, d) - d.sum_log_factorial;
}

/// Analytic gradient of mle_objective.
inline MleParams mle_gradient(const MleParams& prm, const MleData& d) {
  const auto s = softmin_shares(prm.c);
  const auto rates = softmin_rates(prm, d.lambda);
  const std::size_t n = prm.c.rows();
  const std::size_t m = prm.c.cols();
  std::vector<double> dfdrate(m);
  for (std::size_t i = 0; i < m; ++i) dfdrate[i] = 1.0 - (d.mean_q[i] > 0.0 ? d.mean_q[i] / rates[i] : 0.0);
  MleParams g{std::vector<double>(n, 0.0), Matrix<double>(n, m, 0.0)};
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) g.p[j] += dfdrate[i] * d.lambda * s(j, i);
    // d rate_i / d c_ji' = -lambda p_j s_ji (1{i=i'} - s_ji')
    for (std::size_t ip = 0; ip < m; ++ip) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += dfdrate[i] * s(j, i) * ((i == ip ? 1.0 : 0.0) - s(j, ip));
      g.c(j, ip) = -d.lambda * prm.p[j] * acc;
    }
  }
  return g;
}

/// Euclidean projection onto the probability simplex.
inline void project_simplex(std::vector<double>& v) {
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (std::size_t r = 0; r < u.size(); ++r) {
    cum += u[r];
    const double t = (cum - 1.0) / static_cast<double>(r + 1);
    if (u[r] - t > 0.0) theta = t;
  }
  for (auto& x : v) x = std::max(0.0, x - theta);
}

inline MleParams mle_descent(MleParams x, const MleData& d, const MleOptions& opt) {
  for (int it = 0; it < opt.iterations; ++it) {
    const auto g = mle_gradient(x, d);
    for (std::size_t q = 0; q < x.c.data().size(); ++q)
      x.c.data()[q] = std::clamp(x.c.data()[q] - opt.step * g.c.data()[q], opt.lower, opt.upper);
    if (x.p.size() > 1) {
      for (std::size_t j = 0; j < x.p.size(); ++j) x.p[j] -= opt.step * g.p[j];
      project_simplex(x.p);
    }
  }
  return x;
}

inline MleParams mle_initial_point(const MleOptions& opt, int m, int restart) {
  Philox4x32 rng(opt.seed, Stream::restarts, static_cast<std::uint32_t>(restart));
  const auto n = static_cast<std::size_t>(opt.n_types);
  MleParams x{std::vector<double>(n, 1.0 / static_cast<double>(n)), Matrix<double>(n, static_cast<std::size_t>(m))};
  for (auto& c : x.c.data()) c = rng.uniform(-opt.init_range, opt.init_range);
  if (n > 1) {
    double total = 0.0;
    for (auto& p : x.p) total += (p = rng.uniform() + 1e-12);
    for (auto& p : x.p) p /= total;
  }
  return x;
}

/// Best of `restarts` projected-gradient runs by log-likelihood; ties go to
/// the lowest restart index, so the result does not depend on thread count.
inline MleResult estimate_gumbel_mle(const AggregateObservation& obs, const MleOptions& opt = {}) {
  if (opt.n_types < 1 || opt.restarts < 1) throw DomainError("need at least one type and one restart");
  const MleData d = mle_data(obs);
  const int m = obs.m();
  std::vector<MleParams> finals(static_cast<std::size_t>(opt.restarts));
  std::vector<double> lls(static_cast<std::size_t>(opt.restarts));
  auto work = [&](int first, int stride) {
    for (int r = first; r < opt.restarts; r += stride) {
      finals[static_cast<std::size_t>(r)] = mle_descent(mle_initial_point(opt, m, r), d, opt);
      lls[static_cast<std::size_t>(r)] = log_likelihood(finals[static_cast<std::size_t>(r)], d);
    }
  };
  const int threads = std::clamp(opt.threads, 1, opt.restarts);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
  }
  MleResult out;
  out.lambda = d.lambda;
  for (int r = 0; r < opt.restarts; ++r) {
    if (lls[static_cast<std::size_t>(r)] > out.log_likelihood) {
      out.log_likelihood = lls[static_cast<std::size_t>(r)];
      out.best_restart = r;
    }
  }
  out.params = finals[static_cast<std::size_t>(out.best_restart)];
  out.degenerate = std::all_of(d.mean_q.begin(), d.mean_q.end(), [](double q) { return q == 0.0; });
  return out;
}

}  // namespace flowtarget
