#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "ipfp/divergence.hpp"
#include "ipfp/errors.hpp"
#include "ipfp/geometry.hpp"
#include "ipfp/solver.hpp"

namespace ipfp {

inline constexpr double kAuditSlackRel = 1e-8;

struct RateCertificate {
  int n_subspaces = 0;
  double R = 0.0;        // covers every recorded iterate and the optimizer
  double sigma_R = 0.0;  // inf psi'' on (-R, R)
  double L_R = 0.0;      // sup psi'' on (-R, R)
  double norm_S = 0.0;
  double norm_S_inv = 0.0;
  double delta = 0.0;
  double condition = 0.0;
  double gamma = 0.0;  // (1/N) (sigma_R / (L_R ||S|| ||S^-1||))^2
  double rho = 1.0;    // 1 - gamma
  double f_opt = 0.0;
  bool underflow = false;  // sigma_R/L_R underflowed; gamma reported as 0
};

// Contraction coefficient from the measured radius and operator geometry.
// pin_radius substitutes a prescribed R (e.g. an a-priori iterate bound).
inline RateCertificate compute_gamma(int n_subspaces, double measured_radius,
                                     const GeometryReport& geo, const Divergence& div,
                                     double f_opt,
                                     std::optional<double> pin_radius = {}) {
  if (n_subspaces < 1) throw Error("certificate needs at least one subspace");
  if (measured_radius < 0.0) throw Error("measured radius must be nonnegative");
  RateCertificate cert;
  cert.n_subspaces = n_subspaces;
  cert.R = pin_radius ? *pin_radius : measured_radius;
  cert.sigma_R = div.sigma(cert.R);
  cert.L_R = div.lipschitz(cert.R);
  cert.norm_S = geo.norm_S;
  cert.norm_S_inv = geo.norm_S_inv;
  cert.delta = geo.delta;
  cert.condition = geo.condition;
  cert.f_opt = f_opt;
  const double ratio = cert.sigma_R / (cert.L_R * cert.condition);
  cert.gamma = ratio * ratio / n_subspaces;
  if (cert.gamma <= 0.0) {
    cert.gamma = 0.0;
    cert.rho = 1.0;
    cert.underflow = true;
    return cert;
  }
  if (cert.gamma > 1.0 + 1e-12)
    throw Error("contraction coefficient " + std::to_string(cert.gamma) +
                " exceeds 1; geometry or constants are inconsistent");
  cert.gamma = std::min(cert.gamma, 1.0);
  cert.rho = 1.0 - cert.gamma;
  return cert;
}

// lhs <= rhs up to relative slack plus an absolute floor. The floor absorbs
// roundoff in F differences near convergence, where both sides sit at the
// rounding level of the objective and a purely relative test is meaningless.
inline bool leq_with_slack(double lhs, double rhs, double slack_rel, double slack_abs) {
  return lhs <= rhs + slack_rel * (std::abs(lhs) + std::abs(rhs)) + slack_abs;
}

struct SweepChecks {
  int sweep = 0;
  bool pl_ok = false;         // F gap bounded by the quotient gradient norm
  bool stepbound_ok = false;  // gradient bounded by the sweep step
  bool impgap_ok = false;     // squared step bounded by the improvement
  bool imprate_ok = false;    // improvement bounded below by the gradient
  bool normcmp_ok = false;    // delta * quotient norm <= ||S h|| on the step
  bool relimp_ok = false;     // gamma * gap <= per-sweep improvement
  // rhs - lhs for each check, in the order above
  double margins[6] = {0, 0, 0, 0, 0, 0};
  // raw values carried into the trace file
  double pl_lhs = 0.0, pl_rhs = 0.0, imp_lhs = 0.0, imp_rhs = 0.0;

  bool all_ok() const {
    return pl_ok && stepbound_ok && impgap_ok && imprate_ok && normcmp_ok && relimp_ok;
  }
};

struct AuditReport {
  std::vector<SweepChecks> sweeps;
  bool all_ok = true;
  double slack_rel = kAuditSlackRel;
  double slack_abs = 0.0;
};

inline double audit_abs_floor(const IterateTrace& trace, const RateCertificate& cert) {
  const double gap0 =
      trace.sweeps.empty() ? 0.0 : std::abs(trace.sweeps.front().f_before - cert.f_opt);
  return 1e-12 * (1.0 + std::abs(cert.f_opt) + gap0);
}

// Per-sweep verification of the six convergence inequalities.
inline AuditReport audit_inequalities(const IterateTrace& trace,
                                      const RateCertificate& cert,
                                      const SumOperator& op) {
  AuditReport report;
  report.slack_abs = audit_abs_floor(trace, cert);
  const double sr = report.slack_rel, sa = report.slack_abs;
  const int n_sweeps = static_cast<int>(trace.sweeps.size());
  const int nsub = cert.n_subspaces;

  for (int t = 0; t < n_sweeps; ++t) {
    const SweepRecord& rec = trace.sweeps[t];
    SweepChecks chk;
    chk.sweep = t;

    const double gap = rec.f_before - cert.f_opt;
    const double improvement = rec.f_before - rec.f_after;
    const double step = std::sqrt(rec.step_sq);

    // (a) PL: gap <= ||dF^||_~^2 / (2 delta^2 sigma_R)
    chk.pl_lhs = gap;
    chk.pl_rhs = rec.grad_quot_norm * rec.grad_quot_norm /
                 (2.0 * cert.delta * cert.delta * cert.sigma_R);
    chk.pl_ok = leq_with_slack(chk.pl_lhs, chk.pl_rhs, sr, sa);
    chk.margins[0] = chk.pl_rhs - chk.pl_lhs;

    // (b) ||dF||_Sigma <= L sqrt(N) ||S|| * step
    const double step_rhs = cert.L_R * std::sqrt(double(nsub)) * cert.norm_S * step;
    chk.stepbound_ok = leq_with_slack(rec.grad_sum_norm, step_rhs, sr, sa);
    chk.margins[1] = step_rhs - rec.grad_sum_norm;

    // (c) step^2 <= (2 / sigma_R) improvement
    const double impgap_rhs = 2.0 / cert.sigma_R * improvement;
    chk.impgap_ok = leq_with_slack(rec.step_sq, impgap_rhs, sr, sa);
    chk.margins[2] = impgap_rhs - rec.step_sq;

    // (d) sigma_R ||dF||^2 / (2 L^2 N ||S||^2) <= improvement
    chk.imp_lhs = cert.sigma_R * rec.grad_sum_norm * rec.grad_sum_norm /
                  (2.0 * cert.L_R * cert.L_R * nsub * cert.norm_S * cert.norm_S);
    chk.imp_rhs = improvement;
    chk.imprate_ok = leq_with_slack(chk.imp_lhs, chk.imp_rhs, sr, sa);
    chk.margins[3] = chk.imp_rhs - chk.imp_lhs;

    // (e) delta ||[d]||_~ <= ||S d|| on the sweep difference
    const PotentialTuple& next =
        t + 1 < n_sweeps ? trace.sweeps[t + 1].start : trace.final_potentials;
    Vector diff = next.stacked() - rec.start.stacked();
    const double qn = op.project_out_kernel(diff).norm();
    const double sn = (op.assembled * diff).norm();
    chk.normcmp_ok = leq_with_slack(cert.delta * qn, sn, sr, sa);
    chk.margins[4] = sn - cert.delta * qn;

    // (f) gamma * gap <= improvement
    const double relimp_lhs = cert.gamma * gap;
    chk.relimp_ok = leq_with_slack(relimp_lhs, improvement, sr, sa);
    chk.margins[5] = improvement - relimp_lhs;

    report.all_ok = report.all_ok && chk.all_ok();
    report.sweeps.push_back(chk);
  }
  return report;
}

struct EnvelopeReport {
  bool ok = true;
  std::vector<double> bounds;  // rho^t * gap_0 for t = 0..T (T = final iterate)
  double worst_margin = std::numeric_limits<double>::infinity();
  double empirical_median_factor = std::numeric_limits<double>::quiet_NaN();
  double bound_factor = 1.0;  // rho
};

// F(h^t) - F_opt <= rho^t (F(h^0) - F_opt), checked at every sweep and at the
// final iterate. Also reports the median per-sweep gap contraction.
inline EnvelopeReport check_envelope(const IterateTrace& trace,
                                     const RateCertificate& cert) {
  EnvelopeReport rep;
  rep.bound_factor = cert.rho;
  if (trace.sweeps.empty()) {
    rep.bounds.push_back(trace.final_f - cert.f_opt);
    return rep;
  }
  const double gap0 = trace.sweeps.front().f_before - cert.f_opt;
  const double slack_abs = audit_abs_floor(trace, cert);
  double bound = gap0;
  std::vector<double> ratios;
  const int n_sweeps = static_cast<int>(trace.sweeps.size());
  for (int t = 0; t <= n_sweeps; ++t) {
    const double gap =
        (t < n_sweeps ? trace.sweeps[t].f_before : trace.final_f) - cert.f_opt;
    rep.bounds.push_back(bound);
    if (!leq_with_slack(gap, bound, kAuditSlackRel, slack_abs)) rep.ok = false;
    rep.worst_margin = std::min(rep.worst_margin, bound - gap);
    if (t < n_sweeps) {
      const double next_gap =
          (t + 1 < n_sweeps ? trace.sweeps[t + 1].f_before : trace.final_f) -
          cert.f_opt;
      if (gap > 100.0 * slack_abs && next_gap > 100.0 * slack_abs)
        ratios.push_back(next_gap / gap);
      bound *= cert.rho;
    }
  }
  if (!ratios.empty()) {
    std::sort(ratios.begin(), ratios.end());
    rep.empirical_median_factor = ratios[ratios.size() / 2];
  }
  return rep;
}

}  // namespace ipfp
