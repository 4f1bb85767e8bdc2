#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ipfp/divergence.hpp"
#include "ipfp/errors.hpp"
#include "ipfp/geometry.hpp"
#include "ipfp/space.hpp"

namespace ipfp {

inline constexpr double kTargetConsistencyTol = 1e-8;

// A fully assembled problem: minimize F(h) = int psi(sum h - c) dmu - <t, h>
// over tuples h in H_1 x ... x H_N. cost is already divided by epsilon.
struct Instance {
  DiscreteSpace space;
  Measure mu;
  Vector raw_cost;
  double epsilon = 1.0;
  Vector cost;  // raw_cost / epsilon
  Divergence divergence;
  std::vector<Subspace> subspaces;
  std::vector<Vector> targets;  // per subspace, orthonormal coordinates
  SumOperator op;
  std::optional<PotentialTuple> initial;

  int n_subspaces() const { return static_cast<int>(subspaces.size()); }
};

inline Instance make_instance(DiscreteSpace space, Measure mu, Vector raw_cost,
                              double epsilon, Divergence divergence,
                              std::vector<Subspace> subspaces,
                              std::optional<std::vector<Vector>> targets = {},
                              std::optional<PotentialTuple> initial = {},
                              double rank_tol = kDefaultRankTol) {
  space.validate();
  check_same_length("instance: mu size vs space size", space.n, mu.size());
  check_same_length("instance: cost length vs space size", space.n, raw_cost.size());
  if (!(epsilon > 0.0)) throw Error("epsilon must be positive");
  if (subspaces.empty()) throw Error("instance needs at least one subspace");
  for (const auto& s : subspaces)
    check_same_length("instance: subspace rows vs space size", space.n,
                      s.ortho_basis.rows());

  SumOperator op = assemble_sum_operator(subspaces, mu, rank_tol);

  std::vector<Vector> t;
  if (targets) {
    t = std::move(*targets);
    check_same_length("instance: target count vs subspace count", subspaces.size(),
                      t.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      check_same_length("instance: target length vs subspace rank",
                        subspaces[i].rank, t[i].size());
  } else {
    // mu-moments of the unit density
    t.reserve(subspaces.size());
    for (const auto& s : subspaces)
      t.push_back(s.ortho_basis.transpose() * mu.weights());
  }

  // Targets with a kernel component make F unbounded below.
  if (op.kernel_dim() > 0) {
    Vector stacked(op.width());
    int at = 0;
    for (const auto& ti : t) {
      stacked.segment(at, ti.size()) = ti;
      at += static_cast<int>(ti.size());
    }
    const double leak = (stacked - op.project_out_kernel(stacked)).norm();
    if (leak > kTargetConsistencyTol * (1.0 + stacked.norm()))
      throw TargetError("targets have a component of size " + std::to_string(leak) +
                        " along ker S; the dual objective would be unbounded");
  }

  if (initial) {
    check_same_length("instance: initial tuple blocks vs subspace count",
                      subspaces.size(), initial->coeffs.size());
    for (std::size_t i = 0; i < initial->coeffs.size(); ++i)
      check_same_length("instance: initial coefficients vs subspace rank",
                        subspaces[i].rank, initial->coeffs[i].size());
  }

  Vector cost = raw_cost / epsilon;
  return Instance{std::move(space),    std::move(mu),       std::move(raw_cost),
                  epsilon,             std::move(cost),     divergence,
                  std::move(subspaces), std::move(t),       std::move(op),
                  std::move(initial)};
}

namespace detail {

// weighted field residual u = sum h - c
inline Vector residual_field(const Instance& inst, const PotentialTuple& h) {
  return sum_field(h, inst.subspaces) - inst.cost;
}

inline double objective_from_residual(const Instance& inst, const Vector& u,
                                      const PotentialTuple& h) {
  double val = 0.0;
  for (int x = 0; x < u.size(); ++x) val += inst.mu[x] * inst.divergence.psi(u[x]);
  for (int i = 0; i < inst.n_subspaces(); ++i) val -= inst.targets[i].dot(h.coeffs[i]);
  return val;
}

inline Vector gradient_block(const Instance& inst, const Vector& u, int i) {
  Vector v(u.size());
  for (int x = 0; x < u.size(); ++x)
    v[x] = inst.mu[x] * inst.divergence.psi_prime(u[x]);
  return inst.subspaces[i].ortho_basis.transpose() * v - inst.targets[i];
}

}  // namespace detail

inline double dual_objective(const Instance& inst, const PotentialTuple& h) {
  return detail::objective_from_residual(inst, detail::residual_field(inst, h), h);
}

// Riesz representative of the i-th partial derivative of F, in orthonormal
// coordinates: Q_i^T diag(mu) psi'(sum h - c) - t_i.
inline Vector partial_gradient(const Instance& inst, const PotentialTuple& h, int i) {
  if (i < 0 || i >= inst.n_subspaces())
    throw Error("partial_gradient: subspace index " + std::to_string(i) + " out of range");
  return detail::gradient_block(inst, detail::residual_field(inst, h), i);
}

// All partial gradients stacked as a tuple. Orthogonal to ker S whenever the
// targets are consistent, so its l2 norm is also the quotient operator norm.
inline PotentialTuple riesz_gradient(const Instance& inst, const PotentialTuple& h) {
  Vector u = detail::residual_field(inst, h);
  PotentialTuple g;
  g.coeffs.reserve(inst.n_subspaces());
  for (int i = 0; i < inst.n_subspaces(); ++i)
    g.coeffs.push_back(detail::gradient_block(inst, u, i));
  return g;
}

struct SolverConfig {
  int max_sweeps = 500;
  double sweep_tol = 1e-10;      // on the stacked gradient norm
  int inner_max_iter = 100;
  double inner_grad_tol = 1e-12;
  double armijo_c1 = 1e-4;
  double armijo_shrink = 0.5;
  double radius_guard = 50.0;    // abort when ||sum h - c||_inf exceeds this
  bool record_intermediates = false;
};

namespace detail {

// Damped Newton for the block subproblem: moment matching against t_i.
// Mutates theta (= h.coeffs[i]) and keeps u = sum h - c in sync.
inline void minimize_block(const Instance& inst, int i, Vector& theta, Vector& u,
                           const SolverConfig& cfg, int* iterations = nullptr) {
  const Matrix& q = inst.subspaces[i].ortho_basis;
  const Vector& t = inst.targets[i];
  const Divergence& div = inst.divergence;
  const Vector& mu = inst.mu.weights();

  auto local_value = [&](const Vector& uu, const Vector& th) {
    double val = 0.0;
    for (int x = 0; x < uu.size(); ++x) val += mu[x] * div.psi(uu[x]);
    return val - t.dot(th);
  };

  for (int iter = 0; iter < cfg.inner_max_iter; ++iter) {
    Vector v(u.size());
    for (int x = 0; x < u.size(); ++x) v[x] = mu[x] * div.psi_prime(u[x]);
    Vector g = q.transpose() * v - t;
    if (g.norm() <= cfg.inner_grad_tol) {
      if (iterations) *iterations = iter;
      return;
    }
    Vector w(u.size());
    for (int x = 0; x < u.size(); ++x) w[x] = mu[x] * div.psi_second(u[x]);
    Matrix hess = q.transpose() * w.asDiagonal() * q;
    Vector d = hess.ldlt().solve(-g);
    if (!d.allFinite()) throw SolveError("newton direction is not finite");
    const double slope = g.dot(d);
    if (slope >= 0.0) throw SolveError("newton direction is not a descent direction");

    const double f0 = local_value(u, theta);
    double step = 1.0;
    Vector qd = q * d;
    // Near the minimizer the model decrease -slope drops below the roundoff
    // in f itself; Armijo is meaningless there and the full step is safe.
    if (-slope <= 1e-14 * (1.0 + std::abs(f0))) {
      u += qd;
      theta += d;
      continue;
    }
    bool accepted = false;
    while (step > 1e-16) {
      Vector u_trial = u + step * qd;
      Vector theta_trial = theta + step * d;
      const double f_trial = local_value(u_trial, theta_trial);
      if (f_trial <= f0 + cfg.armijo_c1 * step * slope) {
        u = std::move(u_trial);
        theta = std::move(theta_trial);
        accepted = true;
        break;
      }
      step *= cfg.armijo_shrink;
    }
    if (!accepted)
      throw SolveError("line search stalled with gradient norm " +
                       detail::fmt_g(g.norm()));
  }
  Vector v(u.size());
  for (int x = 0; x < u.size(); ++x) v[x] = mu[x] * div.psi_prime(u[x]);
  const double gn = (q.transpose() * v - t).norm();
  if (gn > cfg.inner_grad_tol)
    throw SolveError("inner newton did not reach tolerance (gradient norm " +
                     detail::fmt_g(gn) + ")");
}

}  // namespace detail

// Exact minimizer of F over the i-th block with the others held fixed.
// Returns the updated tuple; for the quadratic divergence a single Newton
// step lands on the minimizer.
inline PotentialTuple coordinate_minimize(const Instance& inst, const PotentialTuple& h,
                                          int i, const SolverConfig& cfg = {},
                                          int* iterations = nullptr) {
  if (i < 0 || i >= inst.n_subspaces())
    throw Error("coordinate_minimize: subspace index " + std::to_string(i) +
                " out of range");
  PotentialTuple out = h;
  Vector u = detail::residual_field(inst, out);
  detail::minimize_block(inst, i, out.coeffs[i], u, cfg, iterations);
  return out;
}

struct SweepRecord {
  double f_before = 0.0;
  double f_after = 0.0;
  double grad_sum_norm = 0.0;   // ||dF(h^t, .)||_Sigma at the sweep start
  double grad_quot_norm = 0.0;  // kernel-projected norm of the same stack
  double radius = 0.0;          // max ||sum h - c||_inf over the sweep's iterates
  double step_sq = 0.0;         // ||h^{t+1} - h^t||_Sigma^2
  PotentialTuple start;
  std::vector<PotentialTuple> intermediates;  // only when record_intermediates
};

struct IterateTrace {
  std::vector<SweepRecord> sweeps;
  PotentialTuple final_potentials;
  double final_f = 0.0;
  double final_grad_sum_norm = 0.0;
  double final_grad_quot_norm = 0.0;
  double final_radius = 0.0;
  double radius = 0.0;  // max over all recorded iterates
  bool converged = false;
};

struct SolveRun {
  PotentialTuple potentials;
  IterateTrace trace;
};

namespace detail {

struct SweepStats {
  Vector u;
  double f = 0.0;
  double grad_sum = 0.0;
  double grad_quot = 0.0;
  double radius = 0.0;
};

inline SweepStats sweep_stats(const Instance& inst, const PotentialTuple& h) {
  SweepStats s;
  s.u = residual_field(inst, h);
  s.f = objective_from_residual(inst, s.u, h);
  PotentialTuple g;
  g.coeffs.reserve(inst.n_subspaces());
  for (int i = 0; i < inst.n_subspaces(); ++i)
    g.coeffs.push_back(gradient_block(inst, s.u, i));
  s.grad_sum = g.sum_norm();
  s.grad_quot = quotient_norm(g, inst.op);
  s.radius = s.u.lpNorm<Eigen::Infinity>();
  return s;
}

inline void finalize_trace(IterateTrace& trace, const PotentialTuple& h,
                           const SweepStats& s, bool converged) {
  trace.final_potentials = h;
  trace.final_f = s.f;
  trace.final_grad_sum_norm = s.grad_sum;
  trace.final_grad_quot_norm = s.grad_quot;
  trace.final_radius = s.radius;
  trace.radius = std::max(trace.radius, s.radius);
  trace.converged = converged;
}

}  // namespace detail

// Cyclic exact coordinate minimization (dual IPFP), fixed order 1..N.
inline SolveRun run_ipfp(const Instance& inst, const SolverConfig& cfg = {}) {
  PotentialTuple h =
      inst.initial ? *inst.initial : PotentialTuple::zeros(inst.subspaces);
  IterateTrace trace;

  for (int t = 0; t <= cfg.max_sweeps; ++t) {
    detail::SweepStats stats = detail::sweep_stats(inst, h);
    trace.radius = std::max(trace.radius, stats.radius);
    if (stats.grad_sum <= cfg.sweep_tol) {
      detail::finalize_trace(trace, h, stats, true);
      break;
    }
    if (t == cfg.max_sweeps) {
      detail::finalize_trace(trace, h, stats, false);
      break;
    }

    SweepRecord rec;
    rec.f_before = stats.f;
    rec.grad_sum_norm = stats.grad_sum;
    rec.grad_quot_norm = stats.grad_quot;
    rec.radius = stats.radius;
    rec.start = h;

    Vector u = stats.u;
    for (int i = 0; i < inst.n_subspaces(); ++i) {
      detail::minimize_block(inst, i, h.coeffs[i], u, cfg);
      rec.radius = std::max(rec.radius, u.lpNorm<Eigen::Infinity>());
      if (cfg.record_intermediates) rec.intermediates.push_back(h);
    }
    if (rec.radius > cfg.radius_guard)
      throw SolveError("unbounded iterates: sweep radius " +
                       std::to_string(rec.radius) + " exceeds guard " +
                       std::to_string(cfg.radius_guard));

    rec.f_after = detail::objective_from_residual(inst, u, h);
    double step_sq = 0.0;
    for (int i = 0; i < inst.n_subspaces(); ++i)
      step_sq += (h.coeffs[i] - rec.start.coeffs[i]).squaredNorm();
    rec.step_sq = step_sq;
    trace.radius = std::max(trace.radius, rec.radius);
    trace.sweeps.push_back(std::move(rec));
  }
  return SolveRun{trace.final_potentials, std::move(trace)};
}

struct JointResult {
  PotentialTuple potentials;
  double f_opt = 0.0;
  double radius = 0.0;  // ||sum h - c||_inf at the optimum
  int iterations = 0;
  double grad_norm = 0.0;
};

// Full Newton on the kernel-orthogonal complement; reference oracle for the
// optimal value F(h_bar).
inline JointResult joint_solve(const Instance& inst, double tol = 1e-12,
                               int max_iter = 200) {
  const SumOperator& op = inst.op;
  Vector theta0 = (inst.initial ? *inst.initial : PotentialTuple::zeros(inst.subspaces))
                      .stacked();
  Vector t_stacked(op.width());
  {
    int at = 0;
    for (const auto& ti : inst.targets) {
      t_stacked.segment(at, ti.size()) = ti;
      at += static_cast<int>(ti.size());
    }
  }
  const Matrix& b = op.row_basis;               // width x rank
  Matrix mw = op.assembled * b;                 // n x rank
  Vector base_w = op.assembled * theta0;        // weighted field of theta0
  const Vector& sw = inst.mu.sqrt_weights();
  const Vector bt = b.transpose() * t_stacked;  // target term in z coordinates
  const double t0 = t_stacked.dot(theta0);

  auto field_residual = [&](const Vector& z) -> Vector {
    return ((base_w + mw * z).array() / sw.array()).matrix() - inst.cost;
  };
  auto value = [&](const Vector& u, const Vector& z) {
    double val = 0.0;
    for (int x = 0; x < u.size(); ++x)
      val += inst.mu[x] * inst.divergence.psi(u[x]);
    return val - t0 - bt.dot(z);
  };

  Vector z = Vector::Zero(op.rank);
  Vector u = field_residual(z);
  JointResult res;
  for (int iter = 0; iter < max_iter; ++iter) {
    Vector vp(u.size());
    for (int x = 0; x < u.size(); ++x)
      vp[x] = sw[x] * inst.divergence.psi_prime(u[x]);
    Vector g = mw.transpose() * vp - bt;  // = B^T (A^T (sw .* psi') - t)
    res.grad_norm = g.norm();
    res.iterations = iter;
    if (res.grad_norm <= tol) {
      Vector theta = theta0 + b * z;
      res.potentials = PotentialTuple::from_stacked(theta, inst.subspaces);
      res.f_opt = value(u, z);
      res.radius = u.lpNorm<Eigen::Infinity>();
      return res;
    }
    Vector d2(u.size());
    for (int x = 0; x < u.size(); ++x) d2[x] = inst.divergence.psi_second(u[x]);
    Matrix hess = mw.transpose() * d2.asDiagonal() * mw;
    Vector d = hess.ldlt().solve(-g);
    if (!d.allFinite()) throw SolveError("joint newton direction is not finite");
    const double slope = g.dot(d);
    if (slope >= 0.0) throw SolveError("joint newton lost descent");
    const double f0 = value(u, z);
    if (-slope <= 1e-14 * (1.0 + std::abs(f0))) {
      // predicted decrease below roundoff; take the full Newton step
      z += d;
      u = field_residual(z);
      continue;
    }
    double step = 1.0;
    bool accepted = false;
    while (step > 1e-16) {
      Vector z_trial = z + step * d;
      Vector u_trial = field_residual(z_trial);
      if (value(u_trial, z_trial) <= f0 + 1e-4 * step * slope) {
        z = std::move(z_trial);
        u = std::move(u_trial);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted)
      throw SolveError("joint newton line search stalled (gradient norm " +
                       std::to_string(res.grad_norm) + ")");
  }
  throw SolveError("joint newton did not reach tolerance " + std::to_string(tol) +
                   " (gradient norm " + std::to_string(res.grad_norm) + ")");
}

// dpi*/dmu = psi'(sum h - c)
inline Vector primal_recover(const Instance& inst, const PotentialTuple& h) {
  Vector u = detail::residual_field(inst, h);
  Vector density(u.size());
  for (int x = 0; x < u.size(); ++x) density[x] = inst.divergence.psi_prime(u[x]);
  return density;
}

inline std::vector<double> moment_residuals(const Instance& inst,
                                            const PotentialTuple& h) {
  Vector u = detail::residual_field(inst, h);
  std::vector<double> out;
  out.reserve(inst.n_subspaces());
  for (int i = 0; i < inst.n_subspaces(); ++i)
    out.push_back(detail::gradient_block(inst, u, i).norm());
  return out;
}

// mu-mass collected by negative density values (can be nonzero under the
// quadratic divergence; identically zero under kl).
inline double negative_density_mass(const Instance& inst, const Vector& density) {
  check_same_length("negative mass: density vs mu size", inst.mu.size(),
                    density.size());
  double mass = 0.0;
  for (int x = 0; x < density.size(); ++x)
    if (density[x] < 0.0) mass -= inst.mu[x] * density[x];
  return mass;
}

struct Solution {
  PotentialTuple potentials;
  double f_value = 0.0;
  bool converged = false;
  int sweeps = 0;
  double radius = 0.0;
  Vector primal_density;
  std::vector<double> moment_residuals;
  double negative_density_mass = 0.0;
};

inline Solution make_solution(const Instance& inst, const SolveRun& run) {
  Solution sol;
  sol.potentials = run.potentials;
  sol.f_value = run.trace.final_f;
  sol.converged = run.trace.converged;
  sol.sweeps = static_cast<int>(run.trace.sweeps.size());
  sol.radius = run.trace.radius;
  sol.primal_density = primal_recover(inst, run.potentials);
  sol.moment_residuals = moment_residuals(inst, run.potentials);
  sol.negative_density_mass = negative_density_mass(inst, sol.primal_density);
  return sol;
}

namespace detail {

inline double logsumexp(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace detail

// Closed-form log-domain Sinkhorn for kl with two marginal-indicator
// subspaces on an n1 x n2 product grid (atom k = a * n2 + b). Produces the
// same trace schema as run_ipfp.
inline SolveRun sinkhorn_closed_form(const Instance& inst, int n1, int n2,
                                     const SolverConfig& cfg = {}) {
  if (inst.divergence.kind != DivergenceKind::kl)
    throw Error("closed-form sinkhorn requires the kl divergence");
  if (inst.n_subspaces() != 2)
    throw Error("closed-form sinkhorn requires exactly two subspaces");
  if (n1 <= 0 || n2 <= 0 || n1 * n2 != inst.space.n)
    throw DimensionError("closed-form sinkhorn: grid does not match space",
                         static_cast<std::size_t>(inst.space.n),
                         static_cast<std::size_t>(n1) * static_cast<std::size_t>(n2));
  if (inst.subspaces[0].rank != n1 || inst.subspaces[1].rank != n2)
    throw Error("closed-form sinkhorn requires full marginal-indicator subspaces");

  // span checks: every indicator of each axis must be reproduced by the
  // corresponding subspace projector
  const Vector& mu = inst.mu.weights();
  for (int axis = 0; axis < 2; ++axis) {
    const Matrix& q = inst.subspaces[axis].ortho_basis;
    const int count = axis == 0 ? n1 : n2;
    for (int idx = 0; idx < count; ++idx) {
      Vector e = Vector::Zero(inst.space.n);
      for (int a = 0; a < n1; ++a)
        for (int bcol = 0; bcol < n2; ++bcol)
          if ((axis == 0 ? a : bcol) == idx) e[a * n2 + bcol] = 1.0;
      Vector proj = q * (q.transpose() * (mu.array() * e.array()).matrix());
      if ((proj - e).lpNorm<Eigen::Infinity>() > 1e-10)
        throw Error("closed-form sinkhorn: subspace " + std::to_string(axis + 1) +
                    " is not the span of axis indicators");
    }
    Vector moments = inst.subspaces[axis].ortho_basis.transpose() * mu;
    if ((moments - inst.targets[axis]).norm() > 1e-10)
      throw Error("closed-form sinkhorn requires mu-moment targets");
  }

  Vector alpha = Vector::Zero(n1), beta = Vector::Zero(n2);
  Vector m1 = Vector::Zero(n1), m2 = Vector::Zero(n2);
  for (int a = 0; a < n1; ++a)
    for (int b = 0; b < n2; ++b) {
      m1[a] += mu[a * n2 + b];
      m2[b] += mu[a * n2 + b];
    }

  auto tuple_from_fields = [&](const Vector& al, const Vector& be) {
    Vector f1(inst.space.n), f2(inst.space.n);
    for (int a = 0; a < n1; ++a)
      for (int b = 0; b < n2; ++b) {
        f1[a * n2 + b] = al[a];
        f2[a * n2 + b] = be[b];
      }
    PotentialTuple h;
    h.coeffs.push_back(inst.subspaces[0].ortho_basis.transpose() *
                       (mu.array() * f1.array()).matrix());
    h.coeffs.push_back(inst.subspaces[1].ortho_basis.transpose() *
                       (mu.array() * f2.array()).matrix());
    return h;
  };
  auto residual_inf = [&](const Vector& al, const Vector& be) {
    double worst = 0.0;
    for (int a = 0; a < n1; ++a)
      for (int b = 0; b < n2; ++b)
        worst = std::max(worst,
                         std::abs(al[a] + be[b] - inst.cost[a * n2 + b]));
    return worst;
  };

  IterateTrace trace;
  for (int t = 0; t <= cfg.max_sweeps; ++t) {
    PotentialTuple h = tuple_from_fields(alpha, beta);
    detail::SweepStats stats = detail::sweep_stats(inst, h);
    trace.radius = std::max(trace.radius, stats.radius);
    if (stats.grad_sum <= cfg.sweep_tol) {
      detail::finalize_trace(trace, h, stats, true);
      break;
    }
    if (t == cfg.max_sweeps) {
      detail::finalize_trace(trace, h, stats, false);
      break;
    }

    SweepRecord rec;
    rec.f_before = stats.f;
    rec.grad_sum_norm = stats.grad_sum;
    rec.grad_quot_norm = stats.grad_quot;
    rec.radius = stats.radius;
    rec.start = h;

    for (int a = 0; a < n1; ++a) {
      Vector terms(n2);
      for (int b = 0; b < n2; ++b)
        terms[b] = std::log(mu[a * n2 + b]) + beta[b] - inst.cost[a * n2 + b];
      alpha[a] = std::log(m1[a]) - detail::logsumexp(terms);
    }
    rec.radius = std::max(rec.radius, residual_inf(alpha, beta));
    if (cfg.record_intermediates) rec.intermediates.push_back(tuple_from_fields(alpha, beta));
    for (int b = 0; b < n2; ++b) {
      Vector terms(n1);
      for (int a = 0; a < n1; ++a)
        terms[a] = std::log(mu[a * n2 + b]) + alpha[a] - inst.cost[a * n2 + b];
      beta[b] = std::log(m2[b]) - detail::logsumexp(terms);
    }
    rec.radius = std::max(rec.radius, residual_inf(alpha, beta));
    if (cfg.record_intermediates) rec.intermediates.push_back(tuple_from_fields(alpha, beta));
    if (rec.radius > cfg.radius_guard)
      throw SolveError("unbounded iterates: sweep radius " +
                       std::to_string(rec.radius) + " exceeds guard " +
                       std::to_string(cfg.radius_guard));

    PotentialTuple h_after = tuple_from_fields(alpha, beta);
    rec.f_after = dual_objective(inst, h_after);
    double step_sq = 0.0;
    for (int i = 0; i < 2; ++i)
      step_sq += (h_after.coeffs[i] - rec.start.coeffs[i]).squaredNorm();
    rec.step_sq = step_sq;
    trace.radius = std::max(trace.radius, rec.radius);
    trace.sweeps.push_back(std::move(rec));
  }
  return SolveRun{trace.final_potentials, std::move(trace)};
}

}  // namespace ipfp
