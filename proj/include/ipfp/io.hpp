#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ipfp/errors.hpp"
#include "ipfp/geometry.hpp"
#include "ipfp/rate.hpp"
#include "ipfp/solver.hpp"
#include "ipfp/space.hpp"

namespace ipfp {

using Json = nlohmann::ordered_json;

namespace detail {

inline const Json& require_field(const Json& j, const char* key,
                                 const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  auto it = j.find(key);
  if (it == j.end())
    throw SchemaError(where + ": missing field '" + std::string(key) + "'");
  return *it;
}

inline double as_number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw SchemaError(where + ": expected a number");
  return j.get<double>();
}

inline int as_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) throw SchemaError(where + ": expected an integer");
  return j.get<int>();
}

inline std::string as_string(const Json& j, const std::string& where) {
  if (!j.is_string()) throw SchemaError(where + ": expected a string");
  return j.get<std::string>();
}

inline Vector vector_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw SchemaError(where + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] =
        as_number(j[i], where + "[" + std::to_string(i) + "]");
  return v;
}

inline Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Json matrix_rows_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j, Eigen::Index expected_rows,
                               const std::string& where) {
  if (!j.is_array() || j.empty())
    throw SchemaError(where + ": expected a nonempty array of rows");
  if (expected_rows >= 0 && static_cast<Eigen::Index>(j.size()) != expected_rows)
    throw SchemaError(where + ": expected " + std::to_string(expected_rows) +
                      " rows, got " + std::to_string(j.size()));
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw SchemaError(where + "[0]: expected a nonempty row");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const std::string row_where = where + "[" + std::to_string(r) + "]";
    if (!j[r].is_array() || j[r].size() != cols)
      throw SchemaError(row_where + ": rows must all have " + std::to_string(cols) +
                        " entries");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          as_number(j[r][c], row_where + "[" + std::to_string(c) + "]");
  }
  return m;
}

inline void write_json_file(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

inline Json parse_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw Error(std::string("cannot open ") + what + " '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw SchemaError(std::string(what) + " '" + path + "': " + e.what());
  }
}

}  // namespace detail

inline Json instance_to_json(const Instance& inst) {
  Json j;
  j["schema_version"] = 1;
  Json sp;
  sp["n"] = inst.space.n;
  if (!inst.space.labels.empty()) sp["labels"] = inst.space.labels;
  j["space"] = std::move(sp);
  j["mu"] = detail::vector_to_json(inst.mu.weights());
  j["cost"] = detail::vector_to_json(inst.raw_cost);
  j["epsilon"] = inst.epsilon;
  j["divergence"] = inst.divergence.name();
  Json subs = Json::array();
  for (const Subspace& s : inst.subspaces) {
    Json js;
    js["name"] = s.name;
    js["basis"] = detail::matrix_rows_to_json(s.raw_basis);
    subs.push_back(std::move(js));
  }
  j["subspaces"] = std::move(subs);
  Json tg = Json::array();
  for (const Vector& t : inst.targets) tg.push_back(detail::vector_to_json(t));
  j["targets"] = std::move(tg);
  if (inst.initial) {
    Json ip = Json::array();
    for (const Vector& c : inst.initial->coeffs)
      ip.push_back(detail::vector_to_json(c));
    j["initial_potentials"] = std::move(ip);
  }
  return j;
}

inline Instance instance_from_json(const Json& j, double rank_tol = kDefaultRankTol) {
  using detail::as_int;
  using detail::as_number;
  using detail::as_string;
  using detail::require_field;
  using detail::vector_from_json;

  const std::string top = "instance file";
  const int version = as_int(require_field(j, "schema_version", top),
                             top + ".schema_version");
  if (version != 1)
    throw SchemaError(top + ": unsupported schema_version " + std::to_string(version));

  const Json& jsp = require_field(j, "space", top);
  const int n = as_int(require_field(jsp, "n", "space"), "space.n");
  if (n < 1) throw SchemaError("space.n: must be positive");
  std::vector<std::string> labels;
  if (jsp.contains("labels") && !jsp.at("labels").is_null()) {
    const Json& jl = jsp.at("labels");
    if (!jl.is_array() || static_cast<int>(jl.size()) != n)
      throw SchemaError("space.labels: expected an array of " + std::to_string(n) +
                        " strings");
    for (std::size_t i = 0; i < jl.size(); ++i)
      labels.push_back(as_string(jl[i], "space.labels[" + std::to_string(i) + "]"));
  }

  Vector mu_w = vector_from_json(require_field(j, "mu", top), "mu");
  if (mu_w.size() != n)
    throw SchemaError("mu: expected " + std::to_string(n) + " weights, got " +
                      std::to_string(mu_w.size()));
  Vector cost = vector_from_json(require_field(j, "cost", top), "cost");
  if (cost.size() != n)
    throw SchemaError("cost: expected " + std::to_string(n) + " values, got " +
                      std::to_string(cost.size()));
  const double epsilon = as_number(require_field(j, "epsilon", top), "epsilon");
  if (!(epsilon > 0.0)) throw SchemaError("epsilon: must be positive");
  const std::string div_name =
      as_string(require_field(j, "divergence", top), "divergence");
  Divergence div;
  try {
    div = make_divergence(div_name);
  } catch (const Error&) {
    throw SchemaError("divergence: unknown name '" + div_name + "'");
  }

  Measure mu(std::move(mu_w));  // MeasureError on invalid weights

  const Json& jss = require_field(j, "subspaces", top);
  if (!jss.is_array() || jss.empty())
    throw SchemaError("subspaces: expected a nonempty array");
  std::vector<Subspace> subspaces;
  for (std::size_t i = 0; i < jss.size(); ++i) {
    const std::string where = "subspaces[" + std::to_string(i) + "]";
    const Json& js = jss[i];
    std::string name = js.is_object() && js.contains("name")
                           ? as_string(js.at("name"), where + ".name")
                           : "subspace_" + std::to_string(i + 1);
    Matrix raw = detail::matrix_from_json(require_field(js, "basis", where), n,
                                          where + ".basis");
    subspaces.push_back(orthonormalize(std::move(raw), mu, rank_tol, name));
  }

  std::optional<std::vector<Vector>> targets;
  if (j.contains("targets") && !j.at("targets").is_null()) {
    const Json& jt = j.at("targets");
    if (!jt.is_array() || jt.size() != subspaces.size())
      throw SchemaError("targets: expected one coefficient list per subspace");
    std::vector<Vector> t;
    for (std::size_t i = 0; i < jt.size(); ++i) {
      const std::string where = "targets[" + std::to_string(i) + "]";
      Vector ti = vector_from_json(jt[i], where);
      if (ti.size() != subspaces[i].rank)
        throw SchemaError(where + ": expected " + std::to_string(subspaces[i].rank) +
                          " coefficients, got " + std::to_string(ti.size()));
      t.push_back(std::move(ti));
    }
    targets = std::move(t);
  }

  std::optional<PotentialTuple> initial;
  if (j.contains("initial_potentials") && !j.at("initial_potentials").is_null()) {
    const Json& ji = j.at("initial_potentials");
    if (!ji.is_array() || ji.size() != subspaces.size())
      throw SchemaError("initial_potentials: expected one coefficient list per subspace");
    PotentialTuple h;
    for (std::size_t i = 0; i < ji.size(); ++i) {
      const std::string where = "initial_potentials[" + std::to_string(i) + "]";
      Vector ci = vector_from_json(ji[i], where);
      if (ci.size() != subspaces[i].rank)
        throw SchemaError(where + ": expected " + std::to_string(subspaces[i].rank) +
                          " coefficients, got " + std::to_string(ci.size()));
      h.coeffs.push_back(std::move(ci));
    }
    initial = std::move(h);
  }

  DiscreteSpace space{n, std::move(labels)};
  return make_instance(std::move(space), std::move(mu), std::move(cost), epsilon, div,
                       std::move(subspaces), std::move(targets), std::move(initial),
                       rank_tol);
}

inline void save_instance(const Instance& inst, const std::string& path) {
  detail::write_json_file(instance_to_json(inst), path);
}

inline Instance load_instance(const std::string& path,
                              double rank_tol = kDefaultRankTol) {
  return instance_from_json(detail::parse_json_file(path, "instance file"), rank_tol);
}

// One row per executed sweep; quantities are taken at the sweep start so the
// envelope column rho^t * gap_0 aligns with F_gap in the same row.
struct TraceRow {
  int sweep = 0;
  double f = 0.0;
  double f_gap = 0.0;
  double grad_sum_norm = 0.0;
  double grad_quotient_norm = 0.0;
  double radius = 0.0;
  double step_sq = 0.0;
  double pl_lhs = 0.0;
  double pl_rhs = 0.0;
  double envelope_bound = 0.0;
  double imp_lhs = 0.0;
  double imp_rhs = 0.0;
};

inline constexpr const char* kTraceHeader =
    "sweep,F,F_gap,grad_sum_norm,grad_quotient_norm,radius,step_sq,pl_lhs,pl_rhs,"
    "envelope_bound,imp_lhs,imp_rhs";

inline std::vector<TraceRow> build_trace_rows(const IterateTrace& trace,
                                              const RateCertificate& cert,
                                              const AuditReport& audit,
                                              const EnvelopeReport& env) {
  const std::size_t n = trace.sweeps.size();
  check_same_length("trace rows: audit sweeps vs solver sweeps", n,
                    audit.sweeps.size());
  if (env.bounds.size() < n)
    throw DimensionError("trace rows: envelope bounds shorter than sweep count",
                         static_cast<long long>(n),
                         static_cast<long long>(env.bounds.size()));
  std::vector<TraceRow> rows(n);
  for (std::size_t t = 0; t < n; ++t) {
    const SweepRecord& rec = trace.sweeps[t];
    const SweepChecks& chk = audit.sweeps[t];
    TraceRow& r = rows[t];
    r.sweep = static_cast<int>(t);
    r.f = rec.f_before;
    r.f_gap = rec.f_before - cert.f_opt;
    r.grad_sum_norm = rec.grad_sum_norm;
    r.grad_quotient_norm = rec.grad_quot_norm;
    r.radius = rec.radius;
    r.step_sq = rec.step_sq;
    r.pl_lhs = chk.pl_lhs;
    r.pl_rhs = chk.pl_rhs;
    r.envelope_bound = env.bounds[t];
    r.imp_lhs = chk.imp_lhs;
    r.imp_rhs = chk.imp_rhs;
  }
  return rows;
}

inline void write_trace(const std::vector<TraceRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << kTraceHeader << '\n';
  char buf[640];
  for (const TraceRow& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                  "%.17g",
                  r.sweep, r.f, r.f_gap, r.grad_sum_norm, r.grad_quotient_norm,
                  r.radius, r.step_sq, r.pl_lhs, r.pl_rhs, r.envelope_bound, r.imp_lhs,
                  r.imp_rhs);
    out << buf << '\n';
  }
}

inline std::vector<TraceRow> read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader)
    throw SchemaError("trace file '" + path + "': unexpected header");
  std::vector<TraceRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t at = 0;
    while (true) {
      const std::size_t comma = line.find(',', at);
      fields.push_back(line.substr(at, comma - at));
      if (comma == std::string::npos) break;
      at = comma + 1;
    }
    if (fields.size() != 12)
      throw SchemaError("trace file '" + path + "' row " + std::to_string(lineno) +
                        ": expected 12 fields, got " + std::to_string(fields.size()));
    TraceRow r;
    try {
      r.sweep = std::stoi(fields[0]);
      double* const slots[11] = {&r.f,       &r.f_gap,          &r.grad_sum_norm,
                                 &r.grad_quotient_norm, &r.radius, &r.step_sq,
                                 &r.pl_lhs,  &r.pl_rhs,         &r.envelope_bound,
                                 &r.imp_lhs, &r.imp_rhs};
      for (int i = 0; i < 11; ++i) *slots[i] = std::stod(fields[i + 1]);
    } catch (const std::exception&) {
      throw SchemaError("trace file '" + path + "' row " + std::to_string(lineno) +
                        ": malformed number");
    }
    rows.push_back(r);
  }
  return rows;
}

inline Json solution_to_json(const Solution& sol) {
  Json j;
  j["schema_version"] = 1;
  j["f_value"] = sol.f_value;
  j["converged"] = sol.converged;
  j["sweeps"] = sol.sweeps;
  j["radius"] = sol.radius;
  Json pot = Json::array();
  for (const Vector& c : sol.potentials.coeffs)
    pot.push_back(detail::vector_to_json(c));
  j["potentials"] = std::move(pot);
  j["primal_density"] = detail::vector_to_json(sol.primal_density);
  j["moment_residuals"] = sol.moment_residuals;
  j["negative_density_mass"] = sol.negative_density_mass;
  return j;
}

inline void save_solution(const Solution& sol, const std::string& path) {
  detail::write_json_file(solution_to_json(sol), path);
}

inline Solution load_solution(const std::string& path) {
  using detail::as_int;
  using detail::as_number;
  using detail::require_field;
  const Json j = detail::parse_json_file(path, "solution file");
  const std::string top = "solution file";
  if (as_int(require_field(j, "schema_version", top), top + ".schema_version") != 1)
    throw SchemaError(top + ": unsupported schema_version");
  Solution sol;
  sol.f_value = as_number(require_field(j, "f_value", top), "f_value");
  const Json& jc = require_field(j, "converged", top);
  if (!jc.is_boolean()) throw SchemaError("converged: expected a boolean");
  sol.converged = jc.get<bool>();
  sol.sweeps = as_int(require_field(j, "sweeps", top), "sweeps");
  sol.radius = as_number(require_field(j, "radius", top), "radius");
  const Json& jp = require_field(j, "potentials", top);
  if (!jp.is_array()) throw SchemaError("potentials: expected an array");
  for (std::size_t i = 0; i < jp.size(); ++i)
    sol.potentials.coeffs.push_back(detail::vector_from_json(
        jp[i], "potentials[" + std::to_string(i) + "]"));
  sol.primal_density =
      detail::vector_from_json(require_field(j, "primal_density", top), "primal_density");
  const Json& jm = require_field(j, "moment_residuals", top);
  if (!jm.is_array()) throw SchemaError("moment_residuals: expected an array");
  for (std::size_t i = 0; i < jm.size(); ++i)
    sol.moment_residuals.push_back(
        as_number(jm[i], "moment_residuals[" + std::to_string(i) + "]"));
  sol.negative_density_mass =
      as_number(require_field(j, "negative_density_mass", top), "negative_density_mass");
  return sol;
}

// Certification keys name the statements a report's numbers instantiate.
inline Json geometry_report_json(const Instance& inst, double formula_tol = 1e-8) {
  const SumOperator& op = inst.op;
  const GeometryReport geo = operator_norms(op);
  Json j;
  j["schema_version"] = 1;

  Json meas;
  meas["certifies"] = Json::array({"eq:factored_sum_operator_norm"});
  meas["norm_S"] = geo.norm_S;
  meas["norm_S_inv"] = geo.norm_S_inv;
  meas["condition"] = geo.condition;
  meas["delta"] = geo.delta;
  meas["kernel_dim"] = geo.kernel_dim;
  meas["rank"] = geo.rank;
  meas["singular_values"] = detail::vector_to_json(op.singular_values);
  const double sqrt_n = std::sqrt(static_cast<double>(inst.n_subspaces()));
  meas["sqrt_N"] = sqrt_n;
  meas["norm_within_sqrt_N"] = geo.norm_S <= sqrt_n + 1e-12;
  meas["standing_violations"] = op.standing_violations;
  j["measured"] = std::move(meas);

  if (inst.n_subspaces() == 2) {
    Json two;
    two["certifies"] = Json::array(
        {"thm:two_subspaces_bounds", "eq:operator_norm", "eq:norm_inverse"});
    try {
      const AngleReport angle =
          friedrichs_angle(inst.subspaces[0], inst.subspaces[1], inst.mu, op.rank_tol);
      const TwoSubspaceNorms formulas = two_subspace_norms_from_angle(
          angle.cos_angle, angle.dim_intersection == 0, op.rank_tol);
      two["cos_angle"] = angle.cos_angle;
      two["dim_intersection"] = angle.dim_intersection;
      two["sum_closed"] = formulas.sum_closed;
      two["formula_norm_S"] = formulas.norm_S;
      two["formula_norm_S_inv"] = formulas.norm_S_inv;
      const double dn = std::abs(formulas.norm_S - geo.norm_S);
      const double di = formulas.sum_closed
                            ? std::abs(formulas.norm_S_inv - geo.norm_S_inv)
                            : std::numeric_limits<double>::quiet_NaN();
      two["discrepancy_norm_S"] = dn;
      two["discrepancy_norm_S_inv"] = di;
      two["matches_svd"] = dn <= formula_tol && (!formulas.sum_closed || di <= formula_tol);
    } catch (const SubspaceError& e) {
      two["containment"] = e.what();
    }
    j["two_subspace_check"] = std::move(two);
  }

  if (inst.n_subspaces() >= 2) {
    Json nb;
    nb["certifies"] = Json::array({"thm:general_subspaces", "eq:norm_bound_N_subspaces",
                                   "eq:norm_bound_inverse_N_subspaces",
                                   "eq:condition_number_N_subspaces"});
    try {
      const NSubspaceBounds bounds =
          n_subspace_bounds(inst.subspaces, inst.mu, op.rank_tol);
      Json steps = Json::array();
      for (const NSubspaceStep& s : bounds.steps) {
        Json js;
        js["cos_angle"] = s.cos_angle;
        js["dim_intersection"] = s.dim_intersection;
        js["norm_factor"] = s.norm_factor;
        js["inv_factor"] = s.inv_factor;
        steps.push_back(std::move(js));
      }
      nb["steps"] = std::move(steps);
      nb["stepwise_trivial"] = bounds.stepwise_trivial;
      nb["norm_bound"] = bounds.norm_bound;
      nb["inv_bound"] = bounds.inv_bound;
      nb["condition_bound"] = bounds.condition_bound;
      nb["direct_norm"] = bounds.direct_norm;
      nb["direct_norm_inv"] = bounds.direct_norm_inv;
      nb["direct_condition"] = bounds.direct_condition;
      nb["direct_within_bound"] = bounds.direct_within_bound;
    } catch (const SubspaceError& e) {
      nb["containment"] = e.what();
    }
    j["n_subspace_bounds"] = std::move(nb);
  }
  return j;
}

struct TraceConsistency {
  bool checked = false;
  int rows = 0;
  double max_abs_diff_f = 0.0;
  bool ok = true;
};

inline Json audit_report_json(const RateCertificate& cert, const AuditReport& audit,
                              const EnvelopeReport& env,
                              const std::optional<TraceConsistency>& trace_check = {}) {
  Json j;
  j["schema_version"] = 1;

  Json c;
  c["certifies"] = Json::array({"eq:rate_constant"});
  c["n_subspaces"] = cert.n_subspaces;
  c["R"] = cert.R;
  c["sigma_R"] = cert.sigma_R;
  c["L_R"] = cert.L_R;
  c["norm_S"] = cert.norm_S;
  c["norm_S_inv"] = cert.norm_S_inv;
  c["delta"] = cert.delta;
  c["condition"] = cert.condition;
  c["gamma"] = cert.gamma;
  c["rho"] = cert.rho;
  c["f_opt"] = cert.f_opt;
  c["underflow"] = cert.underflow;
  j["certificate"] = std::move(c);

  struct Named {
    const char* name;
    const char* certifies;
    int index;
  };
  static constexpr Named kChecks[6] = {
      {"pl", "eq:pl", 0},
      {"derivative_step", "eq:derivative_distance_iterates", 1},
      {"step_improvement", "eq:distance_iterates_improvement_gap", 2},
      {"improvement_rate", "eq:improvement_rate", 3},
      {"norm_comparison", "eq:norm_comparison", 4},
      {"relative_improvement", "eq:relative_improvement", 5},
  };
  auto check_ok = [](const SweepChecks& s, int idx) {
    switch (idx) {
      case 0: return s.pl_ok;
      case 1: return s.stepbound_ok;
      case 2: return s.impgap_ok;
      case 3: return s.imprate_ok;
      case 4: return s.normcmp_ok;
      default: return s.relimp_ok;
    }
  };

  Json checks;
  checks["sweeps"] = static_cast<int>(audit.sweeps.size());
  checks["slack_rel"] = audit.slack_rel;
  checks["slack_abs"] = audit.slack_abs;
  checks["all_ok"] = audit.all_ok;
  Json per = Json::array();
  for (const Named& nc : kChecks) {
    Json one;
    one["name"] = nc.name;
    one["certifies"] = nc.certifies;
    bool ok = true;
    double worst = std::numeric_limits<double>::infinity();
    int first_violation = -1;
    for (const SweepChecks& s : audit.sweeps) {
      if (!check_ok(s, nc.index) && first_violation < 0) first_violation = s.sweep;
      ok = ok && check_ok(s, nc.index);
      worst = std::min(worst, s.margins[nc.index]);
    }
    one["ok"] = ok;
    one["worst_margin"] = audit.sweeps.empty() ? 0.0 : worst;
    one["first_violation_sweep"] = first_violation;
    per.push_back(std::move(one));
  }
  checks["inequalities"] = std::move(per);
  j["checks"] = std::move(checks);

  Json e;
  e["certifies"] = Json::array({"eq:exponential_rate"});
  e["ok"] = env.ok;
  e["bound_factor"] = env.bound_factor;
  e["worst_margin"] = env.worst_margin;
  e["empirical_median_factor"] = env.empirical_median_factor;
  j["envelope"] = std::move(e);

  if (trace_check && trace_check->checked) {
    Json t;
    t["rows"] = trace_check->rows;
    t["max_abs_diff_F"] = trace_check->max_abs_diff_f;
    t["ok"] = trace_check->ok;
    j["trace_consistency"] = std::move(t);
  }

  j["all_ok"] = audit.all_ok && env.ok &&
                (!trace_check || !trace_check->checked || trace_check->ok);
  return j;
}

inline void save_report(const Json& report, const std::string& path) {
  detail::write_json_file(report, path);
}

}  // namespace ipfp
