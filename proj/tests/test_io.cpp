#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>

#include "ipfp/instances.hpp"
#include "ipfp/io.hpp"

using namespace ipfp;
using Catch::Matchers::ContainsSubstring;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("tmp_io_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

struct Pipeline {
  SolveRun run;
  RateCertificate cert;
  AuditReport audit;
  EnvelopeReport env;

  explicit Pipeline(const Instance& inst) {
    run = run_ipfp(inst);
    JointResult joint = joint_solve(inst);
    cert = compute_gamma(inst.n_subspaces(), std::max(run.trace.radius, joint.radius),
                         operator_norms(inst.op), inst.divergence, joint.f_opt);
    audit = audit_inequalities(run.trace, cert, inst.op);
    env = check_envelope(run.trace, cert);
  }
};

}  // namespace

TEST_CASE("instance files round trip exactly", "[io]") {
  Instance inst = gen_ot2(42, 3, 3);
  TempFile f("roundtrip.json");
  save_instance(inst, f.path);
  Instance back = load_instance(f.path);

  CHECK(back.space.n == inst.space.n);
  CHECK(back.space.labels == inst.space.labels);
  CHECK(back.mu.weights() == inst.mu.weights());
  CHECK(back.raw_cost == inst.raw_cost);
  CHECK(back.cost == inst.cost);
  CHECK(back.epsilon == inst.epsilon);
  CHECK(back.divergence.kind == inst.divergence.kind);
  REQUIRE(back.n_subspaces() == inst.n_subspaces());
  for (int i = 0; i < inst.n_subspaces(); ++i) {
    CHECK(back.subspaces[i].name == inst.subspaces[i].name);
    CHECK(back.subspaces[i].raw_basis == inst.subspaces[i].raw_basis);
    // orthonormalization is deterministic, so loaded coordinates agree
    CHECK(back.subspaces[i].ortho_basis == inst.subspaces[i].ortho_basis);
    CHECK(back.targets[i] == inst.targets[i]);
  }
  CHECK_FALSE(back.initial.has_value());

  // serialization is deterministic too
  CHECK(instance_to_json(inst).dump() == instance_to_json(back).dump());
}

TEST_CASE("stored cost stays raw while epsilon scales the loaded one", "[io]") {
  Instance base = gen_ot2(19, 3, 3);
  Instance scaled = make_instance(base.space, base.mu, base.raw_cost, 0.5,
                                  base.divergence, base.subspaces);
  Json j = instance_to_json(scaled);
  CHECK(j["epsilon"] == 0.5);
  CHECK(detail::vector_from_json(j["cost"], "cost") == base.raw_cost);

  TempFile f("epsilon.json");
  save_instance(scaled, f.path);
  Instance back = load_instance(f.path);
  CHECK(back.raw_cost == scaled.raw_cost);
  CHECK(back.cost == scaled.cost);
  CHECK((back.cost - Vector(2.0 * base.raw_cost)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("initial potentials survive the round trip", "[io]") {
  Instance inst = gen_ot2(5, 3, 3);
  PotentialTuple h = PotentialTuple::zeros(inst.subspaces);
  h.coeffs[0][0] = 0.25;
  h.coeffs[1][2] = -1.5;
  Instance seeded = make_instance(inst.space, inst.mu, inst.raw_cost, 1.0,
                                  inst.divergence, inst.subspaces, {}, h);
  TempFile f("initial.json");
  save_instance(seeded, f.path);
  Instance back = load_instance(f.path);
  REQUIRE(back.initial.has_value());
  CHECK(back.initial->coeffs[0] == h.coeffs[0]);
  CHECK(back.initial->coeffs[1] == h.coeffs[1]);
}

TEST_CASE("malformed instance files name the offending field", "[io]") {
  Json good = instance_to_json(gen_ot2(42, 3, 3));

  Json bad = good;
  bad.erase("cost");
  CHECK_THROWS_MATCHES(instance_from_json(bad), SchemaError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("cost")));

  bad = good;
  bad["schema_version"] = 2;
  CHECK_THROWS_MATCHES(
      instance_from_json(bad), SchemaError,
      Catch::Matchers::MessageMatches(ContainsSubstring("schema_version")));

  bad = good;
  bad["mu"] = Json::array({0.4, 0.5});  // wrong length
  CHECK_THROWS_MATCHES(instance_from_json(bad), SchemaError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("mu")));

  bad = good;
  for (auto& w : bad["mu"]) w = w.get<double>() * 0.9;  // sums to 0.9
  CHECK_THROWS_AS(instance_from_json(bad), MeasureError);

  bad = good;
  bad["divergence"] = "nope";
  CHECK_THROWS_MATCHES(instance_from_json(bad), SchemaError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("nope")));

  bad = good;
  bad["epsilon"] = -1.0;
  CHECK_THROWS_MATCHES(instance_from_json(bad), SchemaError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("epsilon")));

  bad = good;
  bad["subspaces"][0]["basis"].erase(0);  // row count no longer matches n
  CHECK_THROWS_MATCHES(instance_from_json(bad), SchemaError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("basis")));

  bad = good;
  bad["targets"][1] = Json::array({0.0});  // wrong coefficient count
  CHECK_THROWS_MATCHES(
      instance_from_json(bad), SchemaError,
      Catch::Matchers::MessageMatches(ContainsSubstring("targets[1]")));

  bad = good;
  for (auto& row : bad["subspaces"][0]["basis"])
    for (auto& v : row) v = 0.0;
  CHECK_THROWS_AS(instance_from_json(bad), SubspaceError);

  bad = good;
  bad["space"]["labels"] = Json::array({"a", "b"});
  CHECK_THROWS_MATCHES(instance_from_json(bad), SchemaError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("labels")));

  CHECK_THROWS_AS(load_instance("does_not_exist.json"), Error);
}

TEST_CASE("trace files round trip exactly", "[io]") {
  Instance inst = gen_ot2(7, 5, 5);
  Pipeline p(inst);
  std::vector<TraceRow> rows = build_trace_rows(p.run.trace, p.cert, p.audit, p.env);
  REQUIRE(rows.size() == p.run.trace.sweeps.size());

  TempFile f("trace.csv");
  write_trace(rows, f.path);
  std::vector<TraceRow> back = read_trace(f.path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    CHECK(back[t].sweep == rows[t].sweep);
    CHECK(back[t].f == rows[t].f);
    CHECK(back[t].f_gap == rows[t].f_gap);
    CHECK(back[t].grad_sum_norm == rows[t].grad_sum_norm);
    CHECK(back[t].grad_quotient_norm == rows[t].grad_quotient_norm);
    CHECK(back[t].radius == rows[t].radius);
    CHECK(back[t].step_sq == rows[t].step_sq);
    CHECK(back[t].pl_lhs == rows[t].pl_lhs);
    CHECK(back[t].pl_rhs == rows[t].pl_rhs);
    CHECK(back[t].envelope_bound == rows[t].envelope_bound);
    CHECK(back[t].imp_lhs == rows[t].imp_lhs);
    CHECK(back[t].imp_rhs == rows[t].imp_rhs);
  }
}

TEST_CASE("trace rows carry sweep-start quantities and the envelope", "[io]") {
  Instance inst = gen_ot2(7, 5, 5);
  Pipeline p(inst);
  std::vector<TraceRow> rows = build_trace_rows(p.run.trace, p.cert, p.audit, p.env);
  const double gap0 = p.run.trace.sweeps.front().f_before - p.cert.f_opt;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    CHECK(rows[t].sweep == static_cast<int>(t));
    CHECK(rows[t].f == p.run.trace.sweeps[t].f_before);
    CHECK(rows[t].f_gap == Catch::Approx(p.run.trace.sweeps[t].f_before - p.cert.f_opt)
                               .margin(1e-15));
    CHECK(rows[t].envelope_bound ==
          Catch::Approx(gap0 * std::pow(p.cert.rho, double(t))).epsilon(1e-12));
    CHECK(rows[t].f_gap <= rows[t].envelope_bound + 1e-10);
  }

  // an audit from a different run cannot be attached to this trace
  SolverConfig one;
  one.max_sweeps = 1;
  SolveRun short_run = run_ipfp(inst, one);
  AuditReport short_audit = audit_inequalities(short_run.trace, p.cert, inst.op);
  CHECK_THROWS_AS(build_trace_rows(p.run.trace, p.cert, short_audit, p.env),
                  DimensionError);
}

TEST_CASE("malformed trace files are rejected", "[io]") {
  TempFile f("badtrace.csv");
  {
    std::ofstream out(f.path);
    out << "sweep,F\n0,1.0\n";
  }
  CHECK_THROWS_MATCHES(read_trace(f.path), SchemaError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("header")));
  {
    std::ofstream out(f.path);
    out << kTraceHeader << "\n0,1.0,2.0\n";
  }
  CHECK_THROWS_MATCHES(read_trace(f.path), SchemaError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("12 fields")));
  {
    std::ofstream out(f.path);
    out << kTraceHeader << "\n0,abc,0,0,0,0,0,0,0,0,0,0\n";
  }
  CHECK_THROWS_MATCHES(read_trace(f.path), SchemaError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("number")));
  CHECK_THROWS_AS(read_trace("missing_trace.csv"), Error);
}

TEST_CASE("solution files round trip exactly", "[io]") {
  Instance inst = gen_ot2(7, 4, 4, false, DivergenceKind::quadratic);
  Solution sol = make_solution(inst, run_ipfp(inst));
  TempFile f("solution.json");
  save_solution(sol, f.path);
  Solution back = load_solution(f.path);
  CHECK(back.f_value == sol.f_value);
  CHECK(back.converged == sol.converged);
  CHECK(back.sweeps == sol.sweeps);
  CHECK(back.radius == sol.radius);
  REQUIRE(back.potentials.coeffs.size() == sol.potentials.coeffs.size());
  for (std::size_t i = 0; i < sol.potentials.coeffs.size(); ++i)
    CHECK(back.potentials.coeffs[i] == sol.potentials.coeffs[i]);
  CHECK(back.primal_density == sol.primal_density);
  CHECK(back.moment_residuals == sol.moment_residuals);
  CHECK(back.negative_density_mass == sol.negative_density_mass);
}

TEST_CASE("geometry report carries measurements and certification keys", "[io]") {
  Instance inst = gen_mot_default(1);
  Json j = geometry_report_json(inst);

  CHECK(j["schema_version"] == 1);
  const Json& meas = j["measured"];
  CHECK(meas["certifies"] == Json::array({"eq:factored_sum_operator_norm"}));
  CHECK(meas["norm_S"].get<double>() ==
        Catch::Approx(std::sqrt(2.0)).margin(1e-10));
  CHECK(meas["kernel_dim"] == 1);
  CHECK(meas["norm_within_sqrt_N"] == true);
  CHECK(meas["standing_violations"].empty());

  const Json& two = j["two_subspace_check"];
  REQUIRE(two.contains("cos_angle"));
  CHECK(two["certifies"][0] == "thm:two_subspaces_bounds");
  CHECK(two["dim_intersection"] == 1);
  CHECK(two["cos_angle"].get<double>() == Catch::Approx(0.5).margin(1e-8));
  CHECK(two["matches_svd"] == true);

  const Json& nb = j["n_subspace_bounds"];
  CHECK(nb["certifies"][0] == "thm:general_subspaces");
  CHECK(nb["direct_within_bound"] == true);
  CHECK(nb["steps"].size() == 1);
}

TEST_CASE("geometry report survives contained subspaces", "[io]") {
  Measure mu(Vector{{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  Matrix r1(3, 2), r2(3, 1);
  r1 << 1, 0, 0, 1, 0, 0;
  r2 << 1, 1, 0;
  std::vector<Subspace> subspaces{orthonormalize(r1, mu), orthonormalize(r2, mu)};
  Instance inst = make_instance(DiscreteSpace{3, {}}, mu, Vector::Zero(3), 1.0,
                                make_divergence(DivergenceKind::kl), subspaces);
  Json j = geometry_report_json(inst);
  CHECK(j["measured"]["standing_violations"] == Json::array({1}));
  CHECK(j["two_subspace_check"].contains("containment"));
  CHECK_FALSE(j["two_subspace_check"].contains("matches_svd"));
}

TEST_CASE("audit report names every inequality", "[io]") {
  Instance inst = gen_ot2(7, 5, 5);
  Pipeline p(inst);
  TraceConsistency tc;
  tc.checked = true;
  tc.rows = static_cast<int>(p.run.trace.sweeps.size());
  tc.max_abs_diff_f = 0.0;
  tc.ok = true;
  Json j = audit_report_json(p.cert, p.audit, p.env, tc);

  CHECK(j["certificate"]["certifies"] == Json::array({"eq:rate_constant"}));
  CHECK(j["certificate"]["gamma"].get<double>() == p.cert.gamma);
  CHECK(j["certificate"]["underflow"] == false);

  const Json& ineq = j["checks"]["inequalities"];
  REQUIRE(ineq.size() == 6);
  const char* names[6] = {"pl",
                          "derivative_step",
                          "step_improvement",
                          "improvement_rate",
                          "norm_comparison",
                          "relative_improvement"};
  const char* keys[6] = {"eq:pl",
                         "eq:derivative_distance_iterates",
                         "eq:distance_iterates_improvement_gap",
                         "eq:improvement_rate",
                         "eq:norm_comparison",
                         "eq:relative_improvement"};
  for (int k = 0; k < 6; ++k) {
    CHECK(ineq[k]["name"] == names[k]);
    CHECK(ineq[k]["certifies"] == keys[k]);
    CHECK(ineq[k]["ok"] == true);
    CHECK(ineq[k]["first_violation_sweep"] == -1);
    CHECK(ineq[k]["worst_margin"].get<double>() > -1e-9);
  }
  CHECK(j["envelope"]["certifies"] == Json::array({"eq:exponential_rate"}));
  CHECK(j["envelope"]["ok"] == true);
  CHECK(j["trace_consistency"]["ok"] == true);
  CHECK(j["all_ok"] == true);

  // without a trace check the block is absent and all_ok ignores it
  Json plain = audit_report_json(p.cert, p.audit, p.env);
  CHECK_FALSE(plain.contains("trace_consistency"));
  CHECK(plain["all_ok"] == true);

  TempFile f("report.json");
  save_report(j, f.path);
  Json parsed = detail::parse_json_file(f.path, "report");
  CHECK(parsed["all_ok"] == true);
}
