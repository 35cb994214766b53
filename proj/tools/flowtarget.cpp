// flowtarget command line: instance generation, single runs, sweeps, the
// hindsight oracle, MLE fitting and nonstationary transforms.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowtarget/flowtarget.hpp"

using namespace flowtarget;

namespace {

constexpr int kGapFlagged = 3;

struct GenArgs {
  std::string kind = "synthetic";
  SyntheticParams synthetic;
  double rho1 = 0.3;
  double rho2 = 0.4;
  std::vector<double> locations{-0.33, 1.27, 0.21};
  double lambda = 4.0;
  std::size_t intervals = 10000;
  std::string out;
  std::string arrivals_out;
};

struct RunArgs {
  std::string instance;
  std::string arrivals;
  std::string policy = "proxy-dgd";
  std::uint64_t seed = 0;
  std::uint32_t substream = 0;
  double eta_mult = 1.0;
  std::string backend = "exact-lp";
  double gap_tol = 1e-6;
  std::string trace_out;
};

struct SweepArgs {
  std::string instance;
  SyntheticParams synthetic;
  std::vector<std::string> policies{"proxy-dgd", "smart-me"};
  std::vector<std::int64_t> T{501};
  std::vector<double> delta{1.0};
  std::vector<double> gamma{2.0};
  int reps = 10;
  std::uint64_t seed = 0;
  double eta_mult = 1.0;
  std::string backend = "exact-lp";
  double gap_tol = 1e-6;
  int threads = 1;
  std::string out;
};

struct OracleArgs {
  std::string instance;
  std::string arrivals;
  std::string backend = "auto";
  double gap_tol = 1e-6;
  int iterations = OracleOptions{}.iterations;
};

struct MleArgs {
  std::string observations;
  MleOptions opt;
  std::string out;
};

struct TransformArgs {
  std::string instance;
  std::vector<double> profile;
  std::string mode = "per-arrival";
  std::int64_t min_epoch_length = 1;
  std::string out;
};

Instance load_instance(const std::string& path) { return instance_from_json(read_json_file(path)); }

void emit_json(const json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json_file(path, j);
  }
}

int cmd_gen(const GenArgs& a) {
  if (a.kind == "gumbel-observations") {
    if (a.locations.empty()) throw DomainError("--locations needs at least one value");
    const auto obs = sample_observations(GumbelCostModel::single_type(a.locations, a.lambda), a.intervals, a.synthetic.seed);
    if (a.out.empty()) {
      write_observations_csv(std::cout, obs);
    } else {
      std::ofstream os(a.out);
      if (!os) throw std::runtime_error("cannot write " + a.out);
      write_observations_csv(os, obs);
    }
    return 0;
  }
  Instance inst;
  std::vector<std::string> warnings;
  if (a.kind == "synthetic") {
    inst = generate_synthetic(a.synthetic, &warnings);
  } else if (a.kind == "myopic-failure") {
    inst = myopic_failure_instance(a.synthetic.T, a.synthetic.delta);
  } else if (a.kind == "naive-failure") {
    inst = naive_failure_instance(a.synthetic.T, a.rho1, a.rho2, a.synthetic.delta);
  } else {
    throw std::invalid_argument("unknown instance kind '" + a.kind + "'");
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  emit_json(to_json(inst), a.out);
  if (!a.arrivals_out.empty()) write_json_file(a.arrivals_out, to_json(sample_arrivals(inst, a.synthetic.seed, a.synthetic.substream)));
  return 0;
}

int cmd_run(const RunArgs& a) {
  const auto inst = load_instance(a.instance);
  const auto omega = a.arrivals.empty() ? sample_arrivals(inst, a.seed, a.substream) : arrivals_from_json(read_json_file(a.arrivals));
  PolicyConfig cfg;
  cfg.eta_mult = a.eta_mult;
  cfg.trace = a.trace_out.empty() ? TraceLevel::decisions : TraceLevel::full;
  const auto kind = parse_policy(a.policy);
  const auto run = run_policy(kind, inst, omega, cfg);
  const auto off = hindsight_optimum(inst, omega, parse_backend(a.backend));
  bool small = false;
  const double rel = relative_regret_percent(run.cost.total, off.value, &small);
  const bool flagged = off.gap > a.gap_tol * std::max(1.0, std::abs(off.value));
  std::cout << "policy," << run.policy << '\n'
            << "eta," << format_double(run.eta) << '\n'
            << "value," << format_double(run.cost.total) << '\n'
            << "assignment_cost," << format_double(run.cost.assignment) << '\n'
            << "deviation_cost," << format_double(run.cost.deviation) << '\n'
            << "offline," << format_double(off.value) << '\n'
            << "oracle_gap," << format_double(off.gap) << '\n'
            << "regret," << format_double(run.cost.total - off.value) << '\n'
            << (small ? "absolute_regret_small_offline," : "relative_regret_percent,") << format_double(rel) << '\n'
            << "mean_abs_deviation," << format_double(mean_abs_target_deviation(run, inst)) << '\n';
  if (run.aux_nonconverged > 0) std::cerr << "warning: " << run.aux_nonconverged << " idealized-consumption solves did not converge\n";
  if (!a.trace_out.empty()) {
    std::ofstream os(a.trace_out);
    if (!os) throw std::runtime_error("cannot write " + a.trace_out);
    write_trace_csv(os, inst, omega, run);
  }
  if (flagged) {
    std::cerr << "oracle gap " << off.gap << " above tolerance\n";
    return kGapFlagged;
  }
  return 0;
}

int cmd_sweep(const SweepArgs& a) {
  ExperimentConfig cfg;
  if (!a.instance.empty()) cfg.instance = load_instance(a.instance);
  cfg.synthetic = a.synthetic;
  cfg.policies.clear();
  for (const auto& p : a.policies) cfg.policies.push_back(parse_policy(p));
  cfg.T = a.T;
  cfg.delta = a.delta;
  cfg.gamma = a.gamma;
  cfg.replications = a.reps;
  cfg.seed = a.seed;
  cfg.backend = parse_backend(a.backend);
  cfg.policy.eta_mult = a.eta_mult;
  cfg.gap_tol = a.gap_tol;
  cfg.threads = a.threads;
  cfg.out_dir = a.out;
  std::vector<std::string> warnings;
  cfg.warnings = &warnings;
  const auto res = run_experiment(cfg);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  write_aggregates_csv(std::cout, res.aggregates);
  if (cfg.T.size() > 1) {
    for (auto kind : cfg.policies) {
      try {
        const auto rep = regret_scaling_report(res.rows, policy_name(kind));
        std::cerr << policy_name(kind) << ": log-log slope of median regret " << format_double(rep.slope) << '\n';
      } catch (const DomainError& e) {
        std::cerr << policy_name(kind) << ": no scaling fit (" << e.what() << ")\n";
      }
    }
  }
  if (res.flagged_gaps > 0) {
    std::cerr << res.flagged_gaps << " replications with oracle gap above tolerance\n";
    return kGapFlagged;
  }
  return 0;
}

int cmd_oracle(const OracleArgs& a) {
  const auto inst = load_instance(a.instance);
  const auto omega = arrivals_from_json(read_json_file(a.arrivals));
  OracleOptions opt;
  opt.iterations = a.iterations;
  const auto sol = hindsight_optimum(inst, omega, parse_backend(a.backend), opt);
  std::cout << "backend," << sol.backend << '\n'
            << "objective," << format_double(sol.value) << '\n'
            << "lower_bound," << format_double(sol.lower_bound) << '\n'
            << "gap," << format_double(sol.gap) << '\n'
            << "epoch,resource,consumption\n";
  for (int e = 0; e < sol.epochs; ++e)
    for (int i = 0; i < inst.m; ++i) std::cout << e + 1 << ',' << i + 1 << ',' << format_double(sol.consumption(e, i)) << '\n';
  if (sol.gap > a.gap_tol * std::max(1.0, std::abs(sol.value))) {
    std::cerr << "oracle gap " << sol.gap << " above tolerance\n";
    return kGapFlagged;
  }
  return 0;
}

int cmd_mle(const MleArgs& a) {
  std::ifstream is(a.observations);
  if (!is) throw std::runtime_error("cannot open " + a.observations);
  const auto res = estimate_gumbel_mle(read_observations_csv(is), a.opt);
  json j;
  j["lambda"] = res.lambda;
  j["log_likelihood"] = res.log_likelihood;
  j["best_restart"] = res.best_restart;
  j["degenerate"] = res.degenerate;
  j["p"] = res.params.p;
  j["c"] = matrix_to_json(res.params.c);
  emit_json(j, a.out);
  return 0;
}

int cmd_transform(const TransformArgs& a) {
  const auto inst = load_instance(a.instance);
  NonstatProfile prof;
  prof.l = a.profile;
  if (a.mode == "per-arrival") {
    prof.mode = TargetMode::per_arrival;
  } else if (a.mode == "per-period") {
    prof.mode = TargetMode::per_period;
  } else {
    throw std::invalid_argument("unknown target mode '" + a.mode + "'");
  }
  const auto res = nonstationary_transform(inst, prof, a.min_epoch_length);
  std::cerr << "epochs " << res.instance.K << " of length " << res.new_epoch_length << "; original epochs end at new epochs";
  for (int f : res.epoch_map) std::cerr << ' ' << f;
  std::cerr << '\n';
  emit_json(to_json(res.instance), a.out);
  return 0;
}

void add_synthetic_flags(CLI::App* cmd, SyntheticParams& p) {
  cmd->add_option("--m", p.m, "resources")->capture_default_str();
  cmd->add_option("--n", p.n, "arrival types")->capture_default_str();
  cmd->add_option("--K", p.K, "epochs")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online allocation with consumption targets: policies, oracles and experiments"};
  app.set_config("--config", "", "read flags from a TOML/INI file");
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate an instance (JSON) or Gumbel observations (CSV)");
  g->add_option("--kind", gen.kind, "synthetic | myopic-failure | naive-failure | gumbel-observations")->capture_default_str();
  add_synthetic_flags(g, gen.synthetic);
  g->add_option("--T", gen.synthetic.T, "horizon")->capture_default_str();
  g->add_option("--delta", gen.synthetic.delta, "deviation scalar")->capture_default_str();
  g->add_option("--gamma", gen.synthetic.gamma, "middle-epoch impulse")->capture_default_str();
  g->add_option("--seed", gen.synthetic.seed)->capture_default_str();
  g->add_option("--substream", gen.synthetic.substream)->capture_default_str();
  g->add_option("--rho1", gen.rho1)->capture_default_str();
  g->add_option("--rho2", gen.rho2)->capture_default_str();
  g->add_option("--locations", gen.locations, "Gumbel locations")->delimiter(',');
  g->add_option("--lambda", gen.lambda, "arrivals per interval")->capture_default_str();
  g->add_option("--intervals", gen.intervals)->capture_default_str();
  g->add_option("--out", gen.out, "output file (default stdout)");
  g->add_option("--arrivals-out", gen.arrivals_out, "also sample an arrival sequence into this file");

  RunArgs run;
  auto* r = app.add_subcommand("run", "run one policy on one sample path and compare with the hindsight optimum");
  r->add_option("--instance", run.instance)->required();
  r->add_option("--arrivals", run.arrivals, "arrival file (default: sample with --seed)");
  r->add_option("--policy", run.policy)->capture_default_str();
  r->add_option("--seed", run.seed)->capture_default_str();
  r->add_option("--substream", run.substream)->capture_default_str();
  r->add_option("--eta-mult", run.eta_mult, "stepsize multiplier on sqrt(K/T)")->capture_default_str();
  r->add_option("--oracle-backend", run.backend)->capture_default_str();
  r->add_option("--gap-tol", run.gap_tol)->capture_default_str();
  r->add_option("--out", run.trace_out, "per-period trace CSV");

  SweepArgs sweep;
  auto* s = app.add_subcommand("sweep", "Monte-Carlo experiment over T, delta and gamma grids");
  s->add_option("--instance", sweep.instance, "fixed instance (default: synthetic per replication)");
  add_synthetic_flags(s, sweep.synthetic);
  s->add_option("--policy", sweep.policies)->delimiter(',');
  s->add_option("--T", sweep.T)->delimiter(',');
  s->add_option("--delta", sweep.delta)->delimiter(',');
  s->add_option("--gamma", sweep.gamma)->delimiter(',');
  s->add_option("--reps", sweep.reps)->capture_default_str();
  s->add_option("--seed", sweep.seed)->capture_default_str();
  s->add_option("--eta-mult", sweep.eta_mult)->capture_default_str();
  s->add_option("--oracle-backend", sweep.backend)->capture_default_str();
  s->add_option("--gap-tol", sweep.gap_tol)->capture_default_str();
  s->add_option("--threads", sweep.threads)->capture_default_str();
  s->add_option("--out", sweep.out, "directory for replications.csv and aggregates.csv");

  OracleArgs oracle;
  auto* o = app.add_subcommand("oracle", "solve the hindsight problem for an instance and arrival sequence");
  o->add_option("--instance", oracle.instance)->required();
  o->add_option("--arrivals", oracle.arrivals)->required();
  o->add_option("--oracle-backend", oracle.backend)->capture_default_str();
  o->add_option("--gap-tol", oracle.gap_tol)->capture_default_str();
  o->add_option("--iterations", oracle.iterations, "dual iteration budget")->capture_default_str();

  MleArgs mle;
  auto* mcmd = app.add_subcommand("mle", "fit Gumbel locations to aggregate observations");
  mcmd->add_option("--observations", mle.observations)->required();
  mcmd->add_option("--types", mle.opt.n_types)->capture_default_str();
  mcmd->add_option("--restarts", mle.opt.restarts)->capture_default_str();
  mcmd->add_option("--iterations", mle.opt.iterations)->capture_default_str();
  mcmd->add_option("--step", mle.opt.step)->capture_default_str();
  mcmd->add_option("--seed", mle.opt.seed)->capture_default_str();
  mcmd->add_option("--threads", mle.opt.threads)->capture_default_str();
  mcmd->add_option("--out", mle.out);

  TransformArgs tr;
  auto* t = app.add_subcommand("transform", "turn an instance with unequal epochs into an equivalent stationary one");
  t->add_option("--instance", tr.instance)->required();
  t->add_option("--profile", tr.profile, "epoch length fractions")->delimiter(',')->required();
  t->add_option("--mode", tr.mode, "per-arrival | per-period")->capture_default_str();
  t->add_option("--min-epoch-length", tr.min_epoch_length)->capture_default_str();
  t->add_option("--out", tr.out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (r->parsed()) return cmd_run(run);
    if (s->parsed()) return cmd_sweep(sweep);
    if (o->parsed()) return cmd_oracle(oracle);
    if (mcmd->parsed()) return cmd_mle(mle);
    if (t->parsed()) return cmd_transform(tr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
