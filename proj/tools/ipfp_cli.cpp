// Command-line surface: gen | solve | geometry | audit.
// Exit codes: 0 success, 1 usage or schema error, 2 numerical failure,
// 3 audit violation.

#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ipfp/instances.hpp"
#include "ipfp/io.hpp"

namespace {

using namespace ipfp;

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const SolveError& e) {
    std::cerr << "solve error: " << e.what() << '\n';
    return 2;
  } catch (const OperatorError& e) {
    std::cerr << "operator error: " << e.what() << '\n';
    return 2;
  } catch (const TargetError& e) {
    std::cerr << "target error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 2;
  }
}

Instance with_divergence(Instance inst, const std::string& name) {
  Divergence d = make_divergence(name);
  if (d.kind == inst.divergence.kind) return inst;
  return make_instance(std::move(inst.space), std::move(inst.mu),
                       std::move(inst.raw_cost), inst.epsilon, d,
                       std::move(inst.subspaces), std::move(inst.targets),
                       std::move(inst.initial));
}

struct SolveFlags {
  std::string instance_path;
  std::string divergence;  // empty = keep the file's
  double tol = 1e-10;
  int max_sweeps = 500;
  bool fast_sinkhorn = false;
};

void add_solve_flags(CLI::App* cmd, SolveFlags& f) {
  cmd->add_option("--instance", f.instance_path, "instance file")->required();
  cmd->add_option("--divergence", f.divergence, "override the file's divergence");
  cmd->add_option("--tol", f.tol, "sweep convergence tolerance on the gradient norm");
  cmd->add_option("--max-sweeps", f.max_sweeps, "sweep budget");
  cmd->add_flag("--fast-sinkhorn", f.fast_sinkhorn,
                "closed-form log-domain updates (kl, two full marginal subspaces)");
}

struct SolveArtifacts {
  Instance inst;
  SolveRun run;
  RateCertificate cert;
  AuditReport audit;
  EnvelopeReport envelope;
  std::vector<TraceRow> rows;
};

// Shared by solve and audit so an audit re-run reproduces the trace bit for
// bit when invoked with the same flags.
SolveArtifacts solve_pipeline(const SolveFlags& f) {
  SolveArtifacts art{load_instance(f.instance_path), {}, {}, {}, {}, {}};
  if (!f.divergence.empty()) art.inst = with_divergence(std::move(art.inst), f.divergence);
  const Instance& inst = art.inst;

  SolverConfig cfg;
  cfg.sweep_tol = f.tol;
  cfg.max_sweeps = f.max_sweeps;
  if (f.fast_sinkhorn) {
    const int n1 = inst.n_subspaces() > 0 ? inst.subspaces[0].rank : 0;
    const int n2 = inst.n_subspaces() > 1 ? inst.subspaces[1].rank : 0;
    if (inst.divergence.kind != DivergenceKind::kl || inst.n_subspaces() != 2 ||
        n1 * n2 != inst.space.n)
      throw Error("--fast-sinkhorn needs a kl instance with two full marginal "
                  "subspaces on a product grid");
    art.run = sinkhorn_closed_form(inst, n1, n2, cfg);
  } else {
    art.run = run_ipfp(inst, cfg);
  }

  const JointResult joint = joint_solve(inst);
  const GeometryReport geo = operator_norms(inst.op);
  art.cert = compute_gamma(inst.n_subspaces(),
                           std::max(art.run.trace.radius, joint.radius), geo,
                           inst.divergence, joint.f_opt);
  art.audit = audit_inequalities(art.run.trace, art.cert, inst.op);
  art.envelope = check_envelope(art.run.trace, art.cert);
  art.rows = build_trace_rows(art.run.trace, art.cert, art.audit, art.envelope);
  return art;
}

int cmd_gen(const std::string& kind, std::uint64_t seed, const std::string& out,
            const std::vector<int>& sizes, int n_subspaces, int shared_dims,
            bool mean_zero, bool distorted, double cost_scale,
            const std::string& div_name) {
  const DivergenceKind dk = make_divergence(div_name).kind;
  Instance inst = [&] {
    if (kind == "ot2") {
      const int n1 = sizes.size() > 0 ? sizes[0] : 5;
      const int n2 = sizes.size() > 1 ? sizes[1] : n1;
      return gen_ot2(seed, n1, n2, mean_zero, dk, cost_scale);
    }
    if (kind == "mmot") {
      const std::vector<int> sz = sizes.empty() ? std::vector<int>{3, 3, 3} : sizes;
      return gen_mmot(seed, sz, mean_zero, dk, cost_scale);
    }
    if (kind == "mot") return gen_mot_default(seed, dk, distorted);
    RandomInstanceSpec rs;
    rs.seed = seed;
    rs.n = sizes.empty() ? 8 : sizes[0];
    rs.N = n_subspaces;
    rs.shared_dims = shared_dims;
    rs.cost_scale = cost_scale;
    rs.divergence = dk;
    return gen_random(rs);
  }();
  save_instance(inst, out);
  std::cout << "wrote " << out << " (n=" << inst.space.n
            << ", subspaces=" << inst.n_subspaces() << ", divergence="
            << inst.divergence.name() << ")\n";
  return 0;
}

int cmd_solve(const SolveFlags& f, const std::string& trace_path,
              const std::string& out_path) {
  SolveArtifacts art = solve_pipeline(f);
  const Solution sol = make_solution(art.inst, art.run);
  if (!out_path.empty()) save_solution(sol, out_path);
  if (!trace_path.empty()) write_trace(art.rows, trace_path);
  std::cout << "sweeps=" << sol.sweeps << " F=" << sol.f_value
            << " converged=" << (sol.converged ? "yes" : "no")
            << " radius=" << sol.radius << '\n';
  if (!sol.converged) {
    std::cerr << "did not converge within " << f.max_sweeps << " sweeps\n";
    return 2;
  }
  return 0;
}

int cmd_geometry(const std::string& instance_path, const std::string& report_path) {
  const Instance inst = load_instance(instance_path);
  const Json report = geometry_report_json(inst);
  if (!report_path.empty()) save_report(report, report_path);
  const Json& m = report.at("measured");
  std::cout << "norm_S=" << m.at("norm_S").get<double>()
            << " norm_S_inv=" << m.at("norm_S_inv").get<double>()
            << " condition=" << m.at("condition").get<double>()
            << " kernel_dim=" << m.at("kernel_dim").get<int>() << '\n';
  return 0;
}

int cmd_audit(const SolveFlags& f, const std::string& trace_path,
              const std::string& report_path) {
  SolveArtifacts art = solve_pipeline(f);

  std::optional<TraceConsistency> tc;
  if (!trace_path.empty()) {
    const std::vector<TraceRow> file_rows = read_trace(trace_path);
    TraceConsistency c;
    c.checked = true;
    c.rows = static_cast<int>(file_rows.size());
    if (file_rows.size() != art.rows.size()) {
      c.ok = false;
      c.max_abs_diff_f = std::numeric_limits<double>::infinity();
    } else {
      for (std::size_t i = 0; i < file_rows.size(); ++i) {
        const double diff = std::abs(file_rows[i].f - art.rows[i].f);
        c.max_abs_diff_f = std::max(c.max_abs_diff_f, diff);
        if (diff > 1e-9 * (1.0 + std::abs(art.rows[i].f))) c.ok = false;
      }
    }
    tc = c;
  }

  const Json report = audit_report_json(art.cert, art.audit, art.envelope, tc);
  if (!report_path.empty()) save_report(report, report_path);

  std::cout << "gamma=" << art.cert.gamma << " rho=" << art.cert.rho
            << " sweeps=" << art.audit.sweeps.size() << '\n';
  for (const Json& one : report.at("checks").at("inequalities"))
    std::cout << "  " << one.at("name").get<std::string>() << ": "
              << (one.at("ok").get<bool>() ? "ok" : "VIOLATED")
              << " (worst margin " << one.at("worst_margin").get<double>() << ")\n";
  std::cout << "  envelope: " << (art.envelope.ok ? "ok" : "VIOLATED") << '\n';
  if (tc)
    std::cout << "  trace file: " << (tc->ok ? "consistent" : "MISMATCH")
              << " (max |dF| " << tc->max_abs_diff_f << ")\n";

  if (!report.at("all_ok").get<bool>()) {
    std::cerr << "audit violation\n";
    return 3;
  }
  std::cout << "audit ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual coordinate descent for divergence-regularized moment problems"};
  app.require_subcommand(1);

  std::string gen_kind, gen_out, gen_div = "kl";
  std::uint64_t gen_seed = 0;
  std::vector<int> gen_sizes;
  int gen_N = 2, gen_shared = 0;
  bool gen_mean_zero = false, gen_distorted = false;
  double gen_cost_scale = 1.0;
  CLI::App* gen = app.add_subcommand("gen", "write a seeded instance file");
  gen->add_option("--kind", gen_kind, "ot2 | mmot | mot | random")
      ->required()
      ->check(CLI::IsMember({"ot2", "mmot", "mot", "random"}));
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output instance file")->required();
  gen->add_option("--n", gen_sizes,
                  "marginal sizes (ot2/mmot) or space size (random)");
  gen->add_option("--N", gen_N, "subspace count (random)");
  gen->add_option("--shared-dims", gen_shared,
                  "common directions in the first two random subspaces");
  gen->add_flag("--mean-zero", gen_mean_zero,
                "center all but the last marginal subspace");
  gen->add_flag("--distorted", gen_distorted,
                "mot: distorted reference density instead of the product");
  gen->add_option("--cost-scale", gen_cost_scale, "cost magnitude");
  gen->add_option("--divergence", gen_div, "kl | quadratic");

  SolveFlags solve_flags;
  std::string solve_trace, solve_out;
  CLI::App* solve = app.add_subcommand("solve", "run the coordinate solver");
  add_solve_flags(solve, solve_flags);
  solve->add_option("--trace", solve_trace, "per-sweep trace output");
  solve->add_option("--out", solve_out, "solution file output");

  std::string geo_instance, geo_report;
  CLI::App* geometry = app.add_subcommand("geometry", "sum-operator geometry report");
  geometry->add_option("--instance", geo_instance, "instance file")->required();
  geometry->add_option("--report", geo_report, "report file output");

  SolveFlags audit_flags;
  std::string audit_trace, audit_report;
  CLI::App* audit = app.add_subcommand(
      "audit", "re-run the solver and check every per-sweep inequality");
  add_solve_flags(audit, audit_flags);
  audit->add_option("--trace", audit_trace,
                    "trace file to cross-check (must come from matching solve flags)");
  audit->add_option("--report", audit_report, "certificate report output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*gen)
    return guarded([&] {
      return cmd_gen(gen_kind, gen_seed, gen_out, gen_sizes, gen_N, gen_shared,
                     gen_mean_zero, gen_distorted, gen_cost_scale, gen_div);
    });
  if (*solve)
    return guarded([&] { return cmd_solve(solve_flags, solve_trace, solve_out); });
  if (*geometry)
    return guarded([&] { return cmd_geometry(geo_instance, geo_report); });
  return guarded([&] { return cmd_audit(audit_flags, audit_trace, audit_report); });
}
