#pragma once

// File formats: instances and arrival sequences as JSON, run traces and
// aggregate observations as CSV.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "flowtarget/core.hpp"
#include "flowtarget/instances.hpp"

namespace flowtarget {

using json = nlohmann::ordered_json;

inline json to_json(const DeviationCost& g) {
  json j;
  j["family"] = to_string(g.family());
  j["target"] = g.target();
  switch (g.family()) {
    case DeviationFamily::zero: break;
    case DeviationFamily::under_over:
      j["over"] = g.over();
      j["under"] = g.under();
      break;
    case DeviationFamily::absolute:
    case DeviationFamily::squared: j["delta"] = g.delta(); break;
  }
  return j;
}

inline DeviationCost deviation_from_json(const json& j) {
  const auto fam = j.at("family").get<std::string>();
  const double target = j.value("target", 0.0);
  if (fam == "zero") return DeviationCost::zero(target);
  if (fam == "under_over") return DeviationCost::under_over(j.at("over").get<double>(), j.at("under").get<double>(), target);
  if (fam == "absolute") return DeviationCost::absolute(j.at("delta").get<double>(), target);
  if (fam == "squared") return DeviationCost::squared(j.at("delta").get<double>(), target);
  throw StructuralError("unknown deviation family '" + fam + "'");
}

template <class T>
json matrix_to_json(const Matrix<T>& mat) {
  json rows = json::array();
  for (std::size_t r = 0; r < mat.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <class T>
Matrix<T> matrix_from_json(const json& j, std::size_t rows, std::size_t cols) {
  if (!j.is_array() || j.size() != rows) throw StructuralError("matrix has the wrong number of rows");
  Matrix<T> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw StructuralError("matrix row has the wrong length");
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = j[r][c].get<T>();
  }
  return out;
}

inline json to_json(const Instance& inst) {
  json j;
  j["m"] = inst.m;
  j["n"] = inst.n;
  j["K"] = inst.K;
  j["T"] = inst.T;
  j["mode"] = inst.mode == ArrivalMode::discrete ? "discrete" : "continuous";
  if (inst.extended_targets) j["extended_targets"] = true;
  if (inst.mode == ArrivalMode::discrete) {
    j["costs"] = matrix_to_json(inst.costs);
    j["feasible_sets"] = inst.feasible_sets;
    j["probs"] = inst.probs;
  }
  j["targets"] = matrix_to_json(inst.targets);
  json dev = json::array();
  for (int k = 0; k < inst.K; ++k) {
    json row = json::array();
    for (int i = 0; i < inst.m; ++i) row.push_back(to_json(inst.dev_costs(k, i)));
    dev.push_back(std::move(row));
  }
  j["dev_costs"] = std::move(dev);
  return j;
}

inline Instance instance_from_json(const json& j) {
  Instance inst;
  inst.m = j.at("m").get<int>();
  inst.n = j.value("n", 0);
  inst.K = j.at("K").get<int>();
  inst.T = j.at("T").get<std::int64_t>();
  inst.mode = j.value("mode", std::string("discrete")) == "continuous" ? ArrivalMode::continuous : ArrivalMode::discrete;
  inst.extended_targets = j.value("extended_targets", false);
  const auto m = static_cast<std::size_t>(inst.m);
  const auto K = static_cast<std::size_t>(inst.K);
  if (inst.mode == ArrivalMode::discrete) {
    inst.costs = matrix_from_json<double>(j.at("costs"), static_cast<std::size_t>(inst.n), m);
    inst.feasible_sets = j.at("feasible_sets").get<std::vector<std::vector<int>>>();
    inst.probs = j.at("probs").get<std::vector<double>>();
  }
  inst.targets = matrix_from_json<double>(j.at("targets"), K, m);
  inst.dev_costs = Matrix<DeviationCost>(K, m);
  const auto& dev = j.at("dev_costs");
  if (!dev.is_array() || dev.size() != K) throw StructuralError("dev_costs must have K rows");
  for (std::size_t k = 0; k < K; ++k) {
    if (!dev[k].is_array() || dev[k].size() != m) throw StructuralError("dev_costs rows must have m entries");
    for (std::size_t i = 0; i < m; ++i) inst.dev_costs(k, i) = deviation_from_json(dev[k][i]);
  }
  inst.validate();
  return inst;
}

inline json to_json(const ArrivalSequence& omega) {
  json j;
  j["mode"] = omega.mode == ArrivalMode::discrete ? "discrete" : "continuous";
  j["seed"] = omega.seed;
  j["stream"] = omega.stream;
  if (omega.mode == ArrivalMode::discrete) {
    j["types"] = omega.types;
  } else {
    j["costs"] = matrix_to_json(omega.costs);
  }
  return j;
}

inline ArrivalSequence arrivals_from_json(const json& j) {
  ArrivalSequence omega;
  omega.mode = j.value("mode", std::string("discrete")) == "continuous" ? ArrivalMode::continuous : ArrivalMode::discrete;
  omega.seed = j.value("seed", std::uint64_t{0});
  omega.stream = j.value("stream", std::string());
  if (omega.mode == ArrivalMode::discrete) {
    omega.types = j.at("types").get<std::vector<int>>();
  } else {
    const auto& rows = j.at("costs");
    const std::size_t cols = rows.empty() ? 0 : rows[0].size();
    omega.costs = matrix_from_json<double>(rows, rows.size(), cols);
  }
  return omega;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

/// Per-period trace: current-epoch duals (full traces only), running
/// averages Z_i(t)/t and the cost accumulated so far (deviation charged at
/// epoch ends).
inline void write_trace_csv(std::ostream& os, const Instance& inst, const ArrivalSequence& omega, const RunResult& run) {
  const bool duals = !run.duals.empty();
  os << "t,epoch,type,decision";
  for (int i = 0; i < inst.m; ++i) os << ",mu_" << i + 1;
  for (int i = 0; i < inst.m; ++i) os << ",running_avg_" << i + 1;
  os << ",cost_so_far\n";
  const auto all = iota_resources(inst.m);
  std::vector<std::int64_t> cum(static_cast<std::size_t>(inst.m), 0);
  double cost = 0.0;
  const std::int64_t L = inst.epoch_length();
  for (std::int64_t t = 0; t < inst.T; ++t) {
    const int k = inst.epoch_of(t);
    const auto view = arrival_at(inst, omega, t, all);
    const int d = run.decisions[static_cast<std::size_t>(t)];
    if (d >= 0) {
      ++cum[static_cast<std::size_t>(d)];
      cost += view.costs[static_cast<std::size_t>(d)];
    }
    if ((t + 1) % L == 0) cost += epoch_deviation_cost(inst, k, cum);
    os << t + 1 << ',' << k + 1 << ',' << (view.type >= 0 ? view.type + 1 : 0) << ',' << (d >= 0 ? d + 1 : 0);
    for (int i = 0; i < inst.m; ++i) os << ',' << (duals ? format_double(run.dual(inst, t, k, i)) : std::string("nan"));
    for (int i = 0; i < inst.m; ++i) os << ',' << format_double(static_cast<double>(cum[static_cast<std::size_t>(i)]) / static_cast<double>(t + 1));
    os << ',' << format_double(cost) << '\n';
  }
}

/// interval,resource,ideal_quantity with resource -1 for the outside option (0-based resources).
inline void write_observations_csv(std::ostream& os, const AggregateObservation& obs) {
  os << "interval,resource,ideal_quantity\n";
  for (std::size_t t = 0; t < obs.intervals(); ++t) {
    for (int i = 0; i < obs.m(); ++i) os << t << ',' << i << ',' << obs.q(t, static_cast<std::size_t>(i)) << '\n';
    os << t << ",-1," << obs.outside[t] << '\n';
  }
}

inline AggregateObservation read_observations_csv(std::istream& is) {
  std::string line;
  std::getline(is, line);
  if (line.rfind("interval,resource,ideal_quantity", 0) != 0) throw StructuralError("unexpected observation header");
  std::vector<std::tuple<std::size_t, int, std::int64_t>> rows;
  std::size_t intervals = 0;
  int m = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c, ','))
      throw StructuralError("malformed observation row: " + line);
    const auto t = static_cast<std::size_t>(std::stoull(a));
    const int i = std::stoi(b);
    const auto q = static_cast<std::int64_t>(std::stoll(c));
    if (i < -1 || q < 0) throw StructuralError("malformed observation row: " + line);
    rows.emplace_back(t, i, q);
    intervals = std::max(intervals, t + 1);
    m = std::max(m, i + 1);
  }
  AggregateObservation obs;
  obs.q = Matrix<std::int64_t>(intervals, static_cast<std::size_t>(m), 0);
  obs.outside.assign(intervals, 0);
  for (const auto& [t, i, q] : rows) {
    if (i < 0) {
      obs.outside[t] += q;
    } else {
      obs.q(t, static_cast<std::size_t>(i)) += q;
    }
  }
  return obs;
}

}  // namespace flowtarget
