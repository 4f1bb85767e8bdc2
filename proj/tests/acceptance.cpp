// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the process exits nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ipfp/instances.hpp"
#include "ipfp/rate.hpp"
#include "ipfp/solver.hpp"

using namespace ipfp;

namespace {

int g_failures = 0;

void run_criterion(int id, const std::string& label,
                   const std::function<bool(std::string&)>& body) {
  auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    ok = false;
    detail = std::string("exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  std::printf("[%s] criterion %d: %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", id,
              label.c_str(), secs, detail.empty() ? "" : " | ",
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double rel_gap(double measured, double expected) {
  return std::abs(measured - expected) / std::max(1.0, std::abs(expected));
}

// Shared solve + audit pipeline; returns false (with message) on any
// violated inequality or envelope breach.
bool audit_instance(const Instance& inst, std::string& why) {
  SolverConfig cfg;
  cfg.max_sweeps = 20000;  // poorly conditioned random draws converge slowly
  SolveRun run = run_ipfp(inst, cfg);
  if (!run.trace.converged) {
    why = "solver did not converge";
    return false;
  }
  JointResult joint = joint_solve(inst);
  GeometryReport geo = operator_norms(inst.op);
  double radius = std::max(run.trace.radius, joint.radius);
  RateCertificate cert = compute_gamma(
      static_cast<int>(inst.subspaces.size()), radius, geo, inst.divergence,
      joint.f_opt);
  AuditReport audit = audit_inequalities(run.trace, cert, inst.op);
  if (!audit.all_ok) {
    why = "per-sweep inequality violated";
    return false;
  }
  EnvelopeReport env = check_envelope(run.trace, cert);
  if (!env.ok) {
    why = "envelope breached (worst margin " +
          std::to_string(env.worst_margin) + ")";
    return false;
  }
  return true;
}

bool criterion_two_subspace_formulas(std::string& detail) {
  auto t0 = std::chrono::steady_clock::now();
  int trivial_seen = 0, nontrivial_seen = 0;
  double worst = 0.0;
  for (int seed = 0; seed < 200; ++seed) {
    TwoSubspacePair pair = gen_two_subspace_pair(seed);
    SumOperator op = assemble_sum_operator({pair.s1, pair.s2}, pair.mu);
    GeometryReport measured = operator_norms(op);
    AngleReport angle = friedrichs_angle(pair.s1, pair.s2, pair.mu);
    bool trivial = angle.dim_intersection == 0;
    (trivial ? trivial_seen : nontrivial_seen) += 1;
    TwoSubspaceNorms formula =
        two_subspace_norms_from_angle(angle.cos_angle, trivial);
    if (!formula.sum_closed) {
      detail = "seed " + std::to_string(seed) + ": sum not closed";
      return false;
    }
    worst = std::max(worst, rel_gap(measured.norm_S, formula.norm_S));
    worst = std::max(worst, rel_gap(measured.norm_S_inv, formula.norm_S_inv));
    if (worst > 1e-8) {
      detail = "seed " + std::to_string(seed) + ": deviation " +
               std::to_string(worst);
      return false;
    }
  }
  double secs = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  if (trivial_seen == 0 || nontrivial_seen == 0) {
    detail = "intersection branches not both exercised";
    return false;
  }
  if (secs >= 10.0) {
    detail = "runtime " + std::to_string(secs) + "s exceeds 10s";
    return false;
  }
  std::ostringstream os;
  os << "max deviation " << worst << ", trivial " << trivial_seen
     << ", nontrivial " << nontrivial_seen;
  detail = os.str();
  return true;
}

bool criterion_mean_zero_isometry(std::string& detail) {
  const std::vector<std::vector<int>> size_sets = {
      {3, 3}, {3, 3, 3}, {2, 3, 2, 2}};
  double worst = 0.0;
  for (const auto& sizes : size_sets) {
    Instance inst = gen_mmot(static_cast<int>(sizes.size()), sizes, true);
    GeometryReport geo = operator_norms(inst.op);
    worst = std::max(worst, std::abs(geo.norm_S - 1.0));
    worst = std::max(worst, std::abs(geo.norm_S_inv - 1.0));
    if (worst > 1e-10) {
      detail = "N=" + std::to_string(sizes.size()) + ": deviation " +
               std::to_string(worst);
      return false;
    }
  }
  std::ostringstream os;
  os << "max deviation from 1 is " << worst;
  detail = os.str();
  return true;
}

bool criterion_martingale_angle(std::string& detail) {
  double worst_eq = 0.0, worst_norm = 0.0;
  // Two-point first marginals: the angle bound is attained exactly.
  for (double a : {0.5, 1.0, 2.0}) {
    for (double w : {0.3, 0.375, 0.45}) {
      MotSpec spec;
      spec.m1 = Marginal{Vector{{-a, a}}, Vector{{0.5, 0.5}}};
      spec.m2 = Marginal{Vector{{-2.0 * a, 0.0, 2.0 * a}},
                         Vector{{w, 1.0 - 2.0 * w, w}}};
      Instance inst = gen_mot(spec, Matrix::Zero(2, 3));
      AngleReport angle =
          friedrichs_angle(inst.subspaces[0], inst.subspaces[1], inst.mu);
      MotAngleBound bound = mot_angle_bound(spec.a(), spec.v2());
      worst_eq = std::max(worst_eq, std::abs(angle.cos_angle - bound.bound));
      if (worst_eq > 1e-8) {
        detail = "two-point case a=" + std::to_string(a) +
                 " w=" + std::to_string(w) + ": angle gap " +
                 std::to_string(worst_eq);
        return false;
      }
      GeometryReport geo = operator_norms(inst.op);
      worst_norm =
          std::max(worst_norm, std::abs(geo.norm_S - std::sqrt(2.0)));
      if (worst_norm > 1e-10) {
        detail = "operator norm deviates from sqrt(2) by " +
                 std::to_string(worst_norm);
        return false;
      }
    }
  }
  // Wider first marginals: the bound must still dominate the measured angle.
  double worst_slack = -1.0;
  Rng rng(2026);
  int draws = 0;
  int attempts = 0;
  while (draws < 20) {
    if (++attempts > 400) {
      detail = "could not draw 20 convex-ordered marginals";
      return false;
    }
    int k1 = 3 + (draws % 2);
    Vector atoms(k1);
    bool distinct = true;
    for (int i = 0; i < k1; ++i) {
      atoms[i] = rng.uniform(-1.0, 1.0);
      for (int j = 0; j < i; ++j)
        if (std::abs(atoms[i] - atoms[j]) < 0.05) distinct = false;
    }
    if (!distinct) continue;
    Vector weights(k1);
    for (int i = 0; i < k1; ++i) weights[i] = 0.2 + rng.uniform(0.0, 1.0);
    weights /= weights.sum();
    atoms.array() -= atoms.dot(weights);

    Marginal m1{atoms, weights};
    Marginal m2{Vector{{-3.0, 0.0, 3.0}}, Vector{{0.4, 0.2, 0.4}}};
    if (!convex_order_check(m1, m2).holds) continue;

    MotSpec spec;
    spec.m1 = m1;
    spec.m2 = m2;
    Instance inst = gen_mot(spec, Matrix::Zero(k1, 3));
    AngleReport angle =
        friedrichs_angle(inst.subspaces[0], inst.subspaces[1], inst.mu);
    MotAngleBound bound = mot_angle_bound(spec.a(), spec.v2());
    if (angle.cos_angle > bound.bound + 1e-8) {
      detail = "draw " + std::to_string(draws) + ": angle " +
               std::to_string(angle.cos_angle) + " exceeds bound " +
               std::to_string(bound.bound);
      return false;
    }
    worst_slack = std::max(worst_slack, angle.cos_angle - bound.bound);
    GeometryReport geo = operator_norms(inst.op);
    worst_norm = std::max(worst_norm, std::abs(geo.norm_S - std::sqrt(2.0)));
    if (worst_norm > 1e-10) {
      detail = "operator norm deviates from sqrt(2) by " +
               std::to_string(worst_norm);
      return false;
    }
    ++draws;
  }
  std::ostringstream os;
  os << "equality gap " << worst_eq << ", dominance slack " << -worst_slack
     << ", norm gap " << worst_norm;
  detail = os.str();
  return true;
}

bool criterion_closed_form_agreement(std::string& detail) {
  double worst = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    Instance inst = gen_ot2(seed, 5, 5);
    SolveRun generic = run_ipfp(inst);
    SolveRun fast = sinkhorn_closed_form(inst, 5, 5);
    if (generic.trace.sweeps.size() != fast.trace.sweeps.size() ||
        generic.trace.converged != fast.trace.converged) {
      detail = "seed " + std::to_string(seed) + ": sweep counts differ (" +
               std::to_string(generic.trace.sweeps.size()) + " vs " +
               std::to_string(fast.trace.sweeps.size()) + ")";
      return false;
    }
    for (std::size_t t = 0; t < generic.trace.sweeps.size(); ++t) {
      Vector fg = sum_field(generic.trace.sweeps[t].start, inst.subspaces);
      Vector ff = sum_field(fast.trace.sweeps[t].start, inst.subspaces);
      worst = std::max(worst, (fg - ff).lpNorm<Eigen::Infinity>());
    }
    Vector dg = primal_recover(inst, generic.potentials);
    Vector df = primal_recover(inst, fast.potentials);
    worst = std::max(worst, (dg - df).lpNorm<Eigen::Infinity>());
    for (double r : moment_residuals(inst, generic.potentials))
      worst = std::max(worst, r);
    for (double r : moment_residuals(inst, fast.potentials))
      worst = std::max(worst, r);
    if (worst > 1e-10) {
      detail = "seed " + std::to_string(seed) + ": deviation " +
               std::to_string(worst);
      return false;
    }
  }
  std::ostringstream os;
  os << "max deviation " << worst << " across 20 seeds";
  detail = os.str();
  return true;
}

bool criterion_audit_suite(std::string& detail) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, Instance>> suite;
  for (DivergenceKind kind : {DivergenceKind::kl, DivergenceKind::quadratic}) {
    std::string tag =
        kind == DivergenceKind::kl ? std::string("kl") : std::string("quad");
    suite.emplace_back("ot2/" + tag, gen_ot2(7, 5, 5, false, kind));
    suite.emplace_back("mmot/" + tag, gen_mmot(5, {3, 3, 3}, true, kind));
    suite.emplace_back("mot/" + tag, gen_mot_default(1, kind));
  }
  for (int seed = 0; seed < 10; ++seed) {
    RandomInstanceSpec spec;
    spec.seed = seed;
    spec.n = 8 + seed % 3;
    spec.N = 2 + seed % 2;
    spec.shared_dims = (seed % 3 == 0) ? 1 : 0;
    spec.divergence =
        seed % 2 == 0 ? DivergenceKind::kl : DivergenceKind::quadratic;
    suite.emplace_back("random/" + std::to_string(seed), gen_random(spec));
  }
  for (const auto& [name, inst] : suite) {
    std::string why;
    if (!audit_instance(inst, why)) {
      detail = name + ": " + why;
      return false;
    }
  }
  double secs = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  if (secs >= 60.0) {
    detail = "runtime " + std::to_string(secs) + "s exceeds 60s";
    return false;
  }
  std::ostringstream os;
  os << suite.size() << " instances audited clean";
  detail = os.str();
  return true;
}

bool criterion_pinned_rate(std::string& detail) {
  double worst = 0.0;
  for (int N : {2, 3}) {
    std::vector<int> sizes(N, 2);
    Instance inst = gen_mmot(N, sizes, true, DivergenceKind::kl, 0.1);
    double cost_inf = inst.cost.lpNorm<Eigen::Infinity>();
    double pin = (4.0 * N - 2.0) * cost_inf;
    SolveRun run = run_ipfp(inst);
    JointResult joint = joint_solve(inst);
    double measured = std::max(run.trace.radius, joint.radius);
    if (measured > pin + 1e-12) {
      detail = "N=" + std::to_string(N) + ": measured radius " +
               std::to_string(measured) + " exceeds pin " +
               std::to_string(pin);
      return false;
    }
    GeometryReport geo = operator_norms(inst.op);
    RateCertificate cert = compute_gamma(N, measured, geo, inst.divergence,
                                         joint.f_opt, pin);
    double expected = std::exp(-(16.0 * N - 8.0) * cost_inf) / N;
    worst = std::max(worst, std::abs(cert.gamma - expected));
    if (worst > 1e-12) {
      detail = "N=" + std::to_string(N) + ": gamma gap " +
               std::to_string(worst);
      return false;
    }
  }
  std::ostringstream os;
  os << "max gamma gap " << worst;
  detail = os.str();
  return true;
}

bool criterion_gradient_fd(std::string& detail) {
  double worst = 0.0;
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Instance inst = [&]() {
      switch (trial % 3) {
        case 0:
          return gen_ot2(trial, 3 + trial % 3, 3,
                         false,
                         trial % 2 == 0 ? DivergenceKind::kl
                                        : DivergenceKind::quadratic);
        case 1: {
          RandomInstanceSpec spec;
          spec.seed = trial;
          spec.n = 6 + trial % 4;
          spec.N = 2 + trial % 2;
          spec.divergence = trial % 2 == 0 ? DivergenceKind::kl
                                           : DivergenceKind::quadratic;
          return gen_random(spec);
        }
        default:
          return gen_mmot(trial, {2, 3}, trial % 2 == 0);
      }
    }();
    Eigen::Index width = 0;
    for (const auto& s : inst.subspaces) width += s.rank;
    Vector hs(width), ds(width);
    for (Eigen::Index i = 0; i < width; ++i) {
      hs[i] = rng.uniform(-0.4, 0.4);
      ds[i] = rng.normal();
    }
    ds /= ds.norm();
    PotentialTuple h = PotentialTuple::from_stacked(hs, inst.subspaces);
    double grad_dir =
        riesz_gradient(inst, h).stacked().dot(ds);
    const double eps = 1e-6;
    PotentialTuple hp = PotentialTuple::from_stacked(hs + eps * ds, inst.subspaces);
    PotentialTuple hm = PotentialTuple::from_stacked(hs - eps * ds, inst.subspaces);
    double fd = (dual_objective(inst, hp) - dual_objective(inst, hm)) /
                (2.0 * eps);
    double gap = std::abs(fd - grad_dir) / std::max(1.0, std::abs(grad_dir));
    worst = std::max(worst, gap);
    if (gap > 1e-6) {
      detail = "trial " + std::to_string(trial) + ": relative gap " +
               std::to_string(gap);
      return false;
    }
  }
  std::ostringstream os;
  os << "max relative gap " << worst << " over 50 triples";
  detail = os.str();
  return true;
}

bool criterion_gauge_invariance(std::string& detail) {
  std::vector<std::pair<std::string, Instance>> suite;
  suite.emplace_back("ot2-full", gen_ot2(23, 4, 3));
  {
    RandomInstanceSpec spec;
    spec.seed = 5;
    spec.n = 9;
    spec.N = 2;
    spec.shared_dims = 2;
    suite.emplace_back("random-shared", gen_random(spec));
  }
  suite.emplace_back("mot", gen_mot_default(2));
  double worst = 0.0;
  Rng rng(314);
  for (const auto& [name, inst] : suite) {
    const Matrix& kernel = inst.op.kernel_basis;
    if (kernel.cols() == 0) {
      detail = name + ": expected a nontrivial kernel";
      return false;
    }
    Eigen::Index width = inst.op.assembled.cols();
    for (int rep = 0; rep < 5; ++rep) {
      Vector hs(width);
      for (Eigen::Index i = 0; i < width; ++i) hs[i] = rng.uniform(-0.5, 0.5);
      Vector coeffs(kernel.cols());
      for (Eigen::Index i = 0; i < kernel.cols(); ++i)
        coeffs[i] = rng.uniform(-1.0, 1.0);
      Vector shifted = hs + kernel * coeffs;
      PotentialTuple h = PotentialTuple::from_stacked(hs, inst.subspaces);
      PotentialTuple hk = PotentialTuple::from_stacked(shifted, inst.subspaces);
      worst = std::max(
          worst, std::abs(dual_objective(inst, h) - dual_objective(inst, hk)));
      worst = std::max(worst, (riesz_gradient(inst, h).stacked() -
                               riesz_gradient(inst, hk).stacked())
                                  .norm());
      worst = std::max(worst, (primal_recover(inst, h) -
                               primal_recover(inst, hk))
                                  .lpNorm<Eigen::Infinity>());
      if (worst > 1e-10) {
        detail = name + ": drift " + std::to_string(worst);
        return false;
      }
    }
  }
  std::ostringstream os;
  os << "max drift " << worst << " across kernel shifts";
  detail = os.str();
  return true;
}

bool criterion_chained_bounds(std::string& detail) {
  double worst = -1.0;
  int trivial_chains = 0;
  for (int seed = 0; seed < 50; ++seed) {
    RandomInstanceSpec spec;
    spec.seed = seed;
    spec.n = 8 + seed % 5;
    spec.N = 3;
    Instance inst = gen_random(spec);
    NSubspaceBounds bounds = n_subspace_bounds(inst.subspaces, inst.mu);
    if (!bounds.direct_within_bound) {
      detail = "seed " + std::to_string(seed) + ": direct condition " +
               std::to_string(bounds.direct_condition) + " exceeds bound " +
               std::to_string(bounds.condition_bound);
      return false;
    }
    if (bounds.stepwise_trivial) ++trivial_chains;
    worst = std::max(worst,
                     bounds.direct_condition / bounds.condition_bound);
  }
  std::ostringstream os;
  os << "max direct/bound ratio " << worst << ", trivial chains "
     << trivial_chains << "/50";
  detail = os.str();
  return true;
}

}  // namespace

int main() {
  run_criterion(1, "two-subspace norms match the angle formulas on 200 seeds",
                criterion_two_subspace_formulas);
  run_criterion(2, "mean-zero moment instances give unit operator norms",
                criterion_mean_zero_isometry);
  run_criterion(3, "martingale angle bound is sharp and dominates",
                criterion_martingale_angle);
  run_criterion(4, "closed-form solver matches the generic sweeps",
                criterion_closed_form_agreement);
  run_criterion(5, "per-sweep inequality audit passes on the full suite",
                criterion_audit_suite);
  run_criterion(6, "pinned-radius rate constant matches the closed form",
                criterion_pinned_rate);
  run_criterion(7, "directional derivatives match central differences",
                criterion_gradient_fd);
  run_criterion(8, "objective, gradient, density invariant to kernel shifts",
                criterion_gauge_invariance);
  run_criterion(9, "direct condition number obeys the chained pair bound",
                criterion_chained_bounds);
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
