#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "ipfp/errors.hpp"
#include "ipfp/space.hpp"

namespace ipfp {

// Euclidean-orthonormal representation of a subspace: diag(sqrt(mu)) * Q.
inline Matrix weighted_basis(const Subspace& s, const Measure& mu) {
  check_same_length("weighted basis: rows vs mu size", mu.size(), s.ortho_basis.rows());
  return mu.sqrt_weights().asDiagonal() * s.ortho_basis;
}

// The sum operator S(h) = h_1 + ... + h_N in orthonormal coordinates:
// stacked coefficients -> function values, realized by the column-block
// matrix A = [U_1 ... U_N]. Its SVD carries the norms, delta and the kernel.
struct SumOperator {
  std::vector<Matrix> blocks;  // U_i, each n x r_i with orthonormal columns
  std::vector<int> offsets;    // column offset of each block inside A
  Matrix assembled;            // A, n x (sum r_i)
  Vector singular_values;      // min(n, width) values, descending
  Matrix kernel_basis;         // width x kernel_dim, orthonormal
  Matrix row_basis;            // width x rank, orthonormal complement of the kernel
  int rank = 0;
  double rank_tol = kDefaultRankTol;
  std::vector<int> standing_violations;  // i with H_i inside the span of the others

  int width() const { return static_cast<int>(assembled.cols()); }
  int kernel_dim() const { return static_cast<int>(kernel_basis.cols()); }
  double norm() const { return singular_values[0]; }
  double sigma_min_plus() const { return singular_values[rank - 1]; }

  Vector project_out_kernel(const Vector& stacked) const {
    check_same_length("kernel projection: stacked length vs operator width", width(),
                      stacked.size());
    if (kernel_dim() == 0) return stacked;
    return stacked - kernel_basis * (kernel_basis.transpose() * stacked);
  }
};

namespace detail {

// Rank of a matrix under the relative singular value cutoff.
inline int svd_rank(const Matrix& m, double rank_tol) {
  if (m.cols() == 0 || m.rows() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] <= 0.0) return 0;
  int r = 0;
  while (r < sv.size() && sv[r] > rank_tol * sv[0]) ++r;
  return r;
}

}  // namespace detail

inline SumOperator assemble_sum_operator(const std::vector<Subspace>& subspaces,
                                         const Measure& mu,
                                         double rank_tol = kDefaultRankTol) {
  if (subspaces.empty()) throw Error("sum operator needs at least one subspace");
  SumOperator op;
  op.rank_tol = rank_tol;
  int width = 0;
  for (const auto& s : subspaces) width += s.rank;
  op.assembled.resize(mu.size(), width);
  int at = 0;
  for (const auto& s : subspaces) {
    Matrix u = weighted_basis(s, mu);
    op.offsets.push_back(at);
    op.assembled.middleCols(at, s.rank) = u;
    op.blocks.push_back(std::move(u));
    at += s.rank;
  }

  Eigen::JacobiSVD<Matrix> svd(op.assembled, Eigen::ComputeFullV);
  op.singular_values = svd.singularValues();
  if (op.singular_values.size() == 0 || op.singular_values[0] <= 0.0)
    throw OperatorError("sum operator is degenerate (all singular values vanish)");
  int rank = 0;
  while (rank < op.singular_values.size() &&
         op.singular_values[rank] > rank_tol * op.singular_values[0])
    ++rank;
  if (rank == 0)
    throw OperatorError("sum operator is degenerate (all singular values below tolerance)");
  op.rank = rank;
  op.row_basis = svd.matrixV().leftCols(rank);
  op.kernel_basis = svd.matrixV().rightCols(width - rank);

  if (subspaces.size() >= 2) {
    for (std::size_t i = 0; i < subspaces.size(); ++i) {
      Matrix rest(mu.size(), width - subspaces[i].rank);
      int put = 0;
      for (std::size_t j = 0; j < subspaces.size(); ++j) {
        if (j == i) continue;
        rest.middleCols(put, subspaces[j].rank) = op.blocks[j];
        put += subspaces[j].rank;
      }
      if (detail::svd_rank(rest, rank_tol) == rank)
        op.standing_violations.push_back(static_cast<int>(i));
    }
  }
  return op;
}

struct AngleReport {
  double cos_angle = 0.0;
  int dim_intersection = 0;
  std::pair<int, int> dims_complements{0, 0};
};

struct GeometryReport {
  double norm_S = 0.0;      // ||S|| = ||S_hat|| = sigma_max
  double norm_S_inv = 0.0;  // 1 / delta
  double condition = 0.0;
  double delta = 0.0;       // smallest singular value above the rank cutoff
  int kernel_dim = 0;
  int rank = 0;
};

inline GeometryReport operator_norms(const SumOperator& op) {
  GeometryReport rep;
  rep.norm_S = op.norm();
  rep.delta = op.sigma_min_plus();
  rep.norm_S_inv = 1.0 / rep.delta;
  rep.condition = rep.norm_S * rep.norm_S_inv;
  rep.kernel_dim = op.kernel_dim();
  rep.rank = op.rank;
  return rep;
}

// ||[h]||_~ : distance to ker S, i.e. the coefficient norm of the stacked
// tuple after removing its kernel projection.
inline double quotient_norm(const PotentialTuple& h, const SumOperator& op) {
  return op.project_out_kernel(h.stacked()).norm();
}

// Friedrichs angle between two subspaces: the intersection M is found from
// the null space of [U1, -U2], then the cosine is the largest singular value
// of the cross-Gram of orthonormal bases of H_i inter M-perp.
inline AngleReport friedrichs_angle(const Subspace& s1, const Subspace& s2,
                                    const Measure& mu,
                                    double rank_tol = kDefaultRankTol) {
  Matrix u1 = weighted_basis(s1, mu);
  Matrix u2 = weighted_basis(s2, mu);
  const int r1 = s1.rank, r2 = s2.rank;
  Matrix c(mu.size(), r1 + r2);
  c << u1, -u2;

  Eigen::JacobiSVD<Matrix> svd(c, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  int crank = 0;
  while (crank < sv.size() && sv[crank] > rank_tol * sv[0]) ++crank;
  const int kdim = r1 + r2 - crank;

  if (kdim >= std::min(r1, r2)) {
    if (r1 <= r2)
      throw SubspaceError("friedrichs angle undefined: '" + s1.name +
                          "' is contained in '" + s2.name + "'");
    throw SubspaceError("friedrichs angle undefined: '" + s2.name +
                        "' is contained in '" + s1.name + "'");
  }

  AngleReport rep;
  rep.dim_intersection = kdim;
  rep.dims_complements = {r1 - kdim, r2 - kdim};

  Matrix w1 = u1, w2 = u2;
  if (kdim > 0) {
    // intersection directions, expressed through the U1 halves of the kernel
    Matrix ker = svd.matrixV().rightCols(kdim);
    Matrix m_raw = u1 * ker.topRows(r1);
    Eigen::HouseholderQR<Matrix> qr(m_raw);
    Matrix m = qr.householderQ() * Matrix::Identity(mu.size(), kdim);
    w1 -= m * (m.transpose() * u1);
    w2 -= m * (m.transpose() * u2);
    Eigen::JacobiSVD<Matrix> s1v(w1, Eigen::ComputeThinU);
    Eigen::JacobiSVD<Matrix> s2v(w2, Eigen::ComputeThinU);
    w1 = s1v.matrixU().leftCols(r1 - kdim);
    w2 = s2v.matrixU().leftCols(r2 - kdim);
  }
  const double cos_raw =
      Eigen::JacobiSVD<Matrix>(w1.transpose() * w2).singularValues()[0];
  rep.cos_angle = std::clamp(cos_raw, 0.0, 1.0);
  return rep;
}

struct TwoSubspaceNorms {
  double norm_S = 0.0;
  double norm_S_inv = 0.0;  // NaN when the sum is effectively non-closed
  bool sum_closed = true;
};

// Closed-form operator norms for two subspaces given their Friedrichs angle:
// norm_S = sqrt(1 + cos) when the intersection is trivial, sqrt(2) otherwise;
// norm_S_inv = (1 - cos)^{-1/2}.
inline TwoSubspaceNorms two_subspace_norms_from_angle(double cos_angle,
                                                      bool intersection_trivial,
                                                      double rank_tol = kDefaultRankTol) {
  if (cos_angle < 0.0 || cos_angle > 1.0 + 1e-9)
    throw Error("cosine of an angle must lie in [0, 1], got " + std::to_string(cos_angle));
  cos_angle = std::min(cos_angle, 1.0);
  TwoSubspaceNorms out;
  out.norm_S = intersection_trivial ? std::sqrt(1.0 + cos_angle) : std::sqrt(2.0);
  if (cos_angle >= 1.0 - rank_tol) {
    out.sum_closed = false;
    out.norm_S_inv = std::numeric_limits<double>::quiet_NaN();
  } else {
    out.norm_S_inv = 1.0 / std::sqrt(1.0 - cos_angle);
  }
  return out;
}

// Largest normalized inner product between two subspaces, no intersection
// removal. Upper-bounds the Friedrichs angle when (V1, V2) complements the
// kernel of an oblique projection onto ker S.
inline double generalized_angle(const Subspace& s1, const Subspace& s2,
                                const Measure& mu) {
  Matrix g = weighted_basis(s1, mu).transpose() * weighted_basis(s2, mu);
  const double v = Eigen::JacobiSVD<Matrix>(g).singularValues()[0];
  return std::clamp(v, 0.0, 1.0);
}

struct NSubspaceStep {
  double cos_angle = 0.0;   // angle between span(H_1..H_j) and H_{j+1}
  int dim_intersection = 0;
  double norm_factor = 0.0;
  double inv_factor = 0.0;
};

struct NSubspaceBounds {
  std::vector<NSubspaceStep> steps;
  double norm_bound = 1.0;       // product of per-step norm factors
  double inv_bound = 1.0;        // product of per-step inverse factors
  double condition_bound = 1.0;  // norm_bound * inv_bound
  bool stepwise_trivial = true;  // all stepwise intersections trivial
  double direct_norm = 0.0;
  double direct_norm_inv = 0.0;
  double direct_condition = 0.0;
  bool direct_within_bound = false;  // direct condition <= bound, 1e-8 slack
};

// Chained two-subspace bounds: the full sum operator norms are bounded by the
// product over j of the pair norms for (H_1 + ... + H_j, H_{j+1}).
inline NSubspaceBounds n_subspace_bounds(const std::vector<Subspace>& subspaces,
                                         const Measure& mu,
                                         double rank_tol = kDefaultRankTol) {
  if (subspaces.size() < 2)
    throw Error("n_subspace_bounds needs at least two subspaces");
  NSubspaceBounds out;

  Subspace prefix = subspaces[0];
  for (std::size_t j = 1; j < subspaces.size(); ++j) {
    AngleReport angle = friedrichs_angle(prefix, subspaces[j], mu, rank_tol);
    TwoSubspaceNorms pair = two_subspace_norms_from_angle(
        angle.cos_angle, angle.dim_intersection == 0, rank_tol);
    out.steps.push_back({angle.cos_angle, angle.dim_intersection, pair.norm_S,
                         pair.norm_S_inv});
    out.norm_bound *= pair.norm_S;
    out.inv_bound *= pair.norm_S_inv;
    if (angle.dim_intersection > 0) out.stepwise_trivial = false;
    if (j + 1 < subspaces.size()) {
      Matrix joined(mu.size(), prefix.rank + subspaces[j].rank);
      joined << prefix.ortho_basis, subspaces[j].ortho_basis;
      prefix = orthonormalize(joined, mu, rank_tol, "prefix");
    }
  }
  out.condition_bound = out.norm_bound * out.inv_bound;

  SumOperator op = assemble_sum_operator(subspaces, mu, rank_tol);
  GeometryReport direct = operator_norms(op);
  out.direct_norm = direct.norm_S;
  out.direct_norm_inv = direct.norm_S_inv;
  out.direct_condition = direct.condition;
  out.direct_within_bound =
      out.direct_condition <= out.condition_bound * (1.0 + 1e-8);
  return out;
}

}  // namespace ipfp
