#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ipfp/errors.hpp"

namespace ipfp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kDefaultRankTol = 1e-10;
inline constexpr double kMeasureSumTol = 1e-12;

// Finite base space. Atoms are indexed 0..n-1; labels are informational only.
struct DiscreteSpace {
  int n = 0;
  std::vector<std::string> labels;  // empty, or one label per atom

  void validate() const {
    if (n <= 0) throw Error("space must contain at least one atom");
    if (labels.empty()) return;
    if (static_cast<int>(labels.size()) != n)
      throw DimensionError("label count does not match atom count", n, labels.size());
    std::vector<std::string> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw Error("atom labels must be pairwise distinct");
  }
};

// Strictly positive probability weights on a DiscreteSpace.
class Measure {
 public:
  explicit Measure(Vector weights) : w_(std::move(weights)) {
    if (w_.size() == 0) throw MeasureError("measure needs at least one atom");
    if ((w_.array() <= 0.0).any())
      throw MeasureError("measure must have full support (all weights > 0)");
    const double total = w_.sum();
    if (std::abs(total - 1.0) > kMeasureSumTol)
      throw MeasureError("measure weights sum to " + std::to_string(total) +
                         ", expected 1 within 1e-12");
    sqrt_w_ = w_.array().sqrt();
  }

  int size() const { return static_cast<int>(w_.size()); }
  const Vector& weights() const { return w_; }
  const Vector& sqrt_weights() const { return sqrt_w_; }
  double operator[](int i) const { return w_[i]; }

 private:
  Vector w_;
  Vector sqrt_w_;
};

inline void check_same_length(const char* what, Eigen::Index a, Eigen::Index b) {
  if (a != b)
    throw DimensionError(std::string(what), static_cast<std::size_t>(a),
                         static_cast<std::size_t>(b));
}

// <f, g>_mu = sum_x mu(x) f(x) g(x)
inline double weighted_inner(const Vector& f, const Vector& g, const Measure& mu) {
  check_same_length("inner product: f length vs mu size", mu.size(), f.size());
  check_same_length("inner product: g length vs mu size", mu.size(), g.size());
  return (f.array() * g.array() * mu.weights().array()).sum();
}

inline double weighted_norm(const Vector& f, const Measure& mu) {
  check_same_length("norm: f length vs mu size", mu.size(), f.size());
  return std::sqrt((f.array().square() * mu.weights().array()).sum());
}

inline double sup_distance(const Vector& f, const Vector& g) {
  check_same_length("sup distance: lengths", f.size(), g.size());
  return (f - g).lpNorm<Eigen::Infinity>();
}

// A subspace of functions on the space, carried as the raw spanning columns
// plus a mu-orthonormal basis: ortho_basis^T diag(mu) ortho_basis = I.
struct Subspace {
  std::string name;
  Matrix raw_basis;    // n x d, as supplied
  Matrix ortho_basis;  // n x rank
  int rank = 0;
};

// Pivot-free deterministic route: SVD of diag(sqrt(mu)) * raw. Columns whose
// relative singular contribution falls below rank_tol are dropped.
inline Subspace orthonormalize(const Matrix& raw, const Measure& mu,
                               double rank_tol = kDefaultRankTol,
                               std::string name = {}) {
  check_same_length("orthonormalize: basis rows vs mu size", mu.size(), raw.rows());
  if (raw.cols() == 0) throw SubspaceError("subspace '" + name + "' has no columns");
  Matrix weighted = mu.sqrt_weights().asDiagonal() * raw;
  Eigen::JacobiSVD<Matrix> svd(weighted, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] <= 0.0)
    throw SubspaceError("subspace '" + name + "' spans nothing (all columns numerically null)");
  int rank = 0;
  while (rank < sv.size() && sv[rank] > rank_tol * sv[0]) ++rank;
  if (rank == 0)
    throw SubspaceError("subspace '" + name + "' spans nothing (all columns numerically null)");
  Subspace out;
  out.name = std::move(name);
  out.raw_basis = raw;
  out.ortho_basis = mu.sqrt_weights().cwiseInverse().asDiagonal() * svd.matrixU().leftCols(rank);
  // SVD leaves column signs arbitrary; pin them for reproducible coordinates.
  for (int c = 0; c < rank; ++c) {
    int at = 0;
    out.ortho_basis.col(c).cwiseAbs().maxCoeff(&at);
    if (out.ortho_basis(at, c) < 0.0) out.ortho_basis.col(c) = -out.ortho_basis.col(c);
  }
  out.rank = rank;
  return out;
}

// One coefficient vector per subspace, in mu-orthonormal coordinates.
// The product norm ||h||_Sigma is the plain l2 norm of the stack.
struct PotentialTuple {
  std::vector<Vector> coeffs;

  static PotentialTuple zeros(const std::vector<Subspace>& subspaces) {
    PotentialTuple h;
    h.coeffs.reserve(subspaces.size());
    for (const auto& s : subspaces) h.coeffs.push_back(Vector::Zero(s.rank));
    return h;
  }

  int blocks() const { return static_cast<int>(coeffs.size()); }

  int stacked_size() const {
    int total = 0;
    for (const auto& c : coeffs) total += static_cast<int>(c.size());
    return total;
  }

  Vector stacked() const {
    Vector out(stacked_size());
    int at = 0;
    for (const auto& c : coeffs) {
      out.segment(at, c.size()) = c;
      at += static_cast<int>(c.size());
    }
    return out;
  }

  static PotentialTuple from_stacked(const Vector& stacked,
                                     const std::vector<Subspace>& subspaces) {
    PotentialTuple h;
    h.coeffs.reserve(subspaces.size());
    int at = 0;
    for (const auto& s : subspaces) {
      if (at + s.rank > stacked.size())
        throw DimensionError("stacked coefficients too short for subspace ranks",
                             static_cast<std::size_t>(at + s.rank),
                             static_cast<std::size_t>(stacked.size()));
      h.coeffs.push_back(stacked.segment(at, s.rank));
      at += s.rank;
    }
    if (at != stacked.size())
      throw DimensionError("stacked coefficients longer than subspace ranks", at,
                           static_cast<std::size_t>(stacked.size()));
    return h;
  }

  double sum_norm() const {
    double sq = 0.0;
    for (const auto& c : coeffs) sq += c.squaredNorm();
    return std::sqrt(sq);
  }
};

// Pointwise sum h_1 + ... + h_N as a function on the space.
inline Vector sum_field(const PotentialTuple& h, const std::vector<Subspace>& subspaces) {
  check_same_length("sum_field: tuple blocks vs subspace count", subspaces.size(),
                    h.coeffs.size());
  if (subspaces.empty()) throw Error("sum_field needs at least one subspace");
  Vector total = Vector::Zero(subspaces.front().ortho_basis.rows());
  for (std::size_t i = 0; i < subspaces.size(); ++i) {
    check_same_length("sum_field: coefficient length vs subspace rank",
                      subspaces[i].rank, h.coeffs[i].size());
    check_same_length("sum_field: subspaces on different spaces", total.size(),
                      subspaces[i].ortho_basis.rows());
    total.noalias() += subspaces[i].ortho_basis * h.coeffs[i];
  }
  return total;
}

}  // namespace ipfp
