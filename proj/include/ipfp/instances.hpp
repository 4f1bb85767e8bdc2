#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ipfp/divergence.hpp"
#include "ipfp/errors.hpp"
#include "ipfp/geometry.hpp"
#include "ipfp/solver.hpp"
#include "ipfp/space.hpp"

namespace ipfp {

// Deterministic draws independent of the standard library's distribution
// implementations, so a seed pins the instance everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }  // [0,1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(uniform() * (hi - lo + 1.0));
  }
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    have_spare_ = true;
    spare_ = r * std::sin(2.0 * M_PI * u2);
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

struct Marginal {
  Vector atoms;
  Vector weights;
};

namespace detail {

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline Vector random_weights(Rng& rng, int n) {
  Vector w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.2 + rng.uniform();
  w /= w.sum();
  return w;
}

inline Vector equispaced_atoms(int n) {
  Vector x(n);
  if (n == 1) {
    x[0] = 0.0;
    return x;
  }
  for (int i = 0; i < n; ++i) x[i] = -1.0 + 2.0 * i / (n - 1);
  return x;
}

struct ProductLayout {
  std::vector<int> sizes;
  std::vector<int> strides;  // last coordinate fastest
  int total = 1;

  explicit ProductLayout(std::vector<int> sizes_) : sizes(std::move(sizes_)) {
    strides.assign(sizes.size(), 1);
    for (int i = static_cast<int>(sizes.size()) - 2; i >= 0; --i)
      strides[i] = strides[i + 1] * sizes[i + 1];
    for (int s : sizes) total *= s;
  }
  int coord(int flat, int axis) const { return (flat / strides[axis]) % sizes[axis]; }
};

// Indicator columns of one coordinate, optionally centered against its
// marginal (drops the constant; rank becomes size - 1).
inline Matrix marginal_indicator_basis(const ProductLayout& layout, int axis,
                                       const Vector& marginal_weights,
                                       bool mean_zero) {
  Matrix raw = Matrix::Zero(layout.total, layout.sizes[axis]);
  for (int x = 0; x < layout.total; ++x) raw(x, layout.coord(x, axis)) = 1.0;
  if (mean_zero)
    for (int a = 0; a < layout.sizes[axis]; ++a)
      raw.col(a).array() -= marginal_weights[a];
  return raw;
}

inline std::vector<std::string> product_labels(const ProductLayout& layout) {
  std::vector<std::string> labels(layout.total);
  for (int x = 0; x < layout.total; ++x) {
    std::string lab;
    for (std::size_t axis = 0; axis < layout.sizes.size(); ++axis) {
      if (axis) lab += ',';
      lab += std::to_string(layout.coord(x, static_cast<int>(axis)));
    }
    labels[x] = std::move(lab);
  }
  return labels;
}

inline Vector product_measure_weights(const ProductLayout& layout,
                                      const std::vector<Marginal>& marginals) {
  Vector w = Vector::Ones(layout.total);
  for (int x = 0; x < layout.total; ++x)
    for (std::size_t axis = 0; axis < marginals.size(); ++axis)
      w[x] *= marginals[axis].weights[layout.coord(x, static_cast<int>(axis))];
  return w / w.sum();
}

}  // namespace detail

// Multi-marginal instance on a product grid: one indicator subspace per
// coordinate; with mean_zero the first N-1 are centered, the normalization
// that makes the spaces mutually orthogonal under product mu.
inline Instance gen_mmot(std::uint64_t seed, const std::vector<int>& sizes,
                         bool mean_zero = true,
                         DivergenceKind kind = DivergenceKind::kl,
                         double cost_scale = 1.0) {
  if (sizes.size() < 2) throw Error("gen_mmot needs at least two marginals");
  for (int s : sizes)
    if (s < 2) throw Error("gen_mmot needs at least two atoms per marginal");
  Rng rng(seed);
  detail::ProductLayout layout(sizes);
  std::vector<Marginal> marginals;
  for (int s : sizes)
    marginals.push_back({detail::equispaced_atoms(s), detail::random_weights(rng, s)});

  Vector cost(layout.total);
  const int n_axes = static_cast<int>(sizes.size());
  for (int x = 0; x < layout.total; ++x) {
    double c = 0.0;
    for (int a = 0; a < n_axes; ++a)
      for (int b = a + 1; b < n_axes; ++b)
        c += marginals[a].atoms[layout.coord(x, a)] * marginals[b].atoms[layout.coord(x, b)];
    cost[x] = cost_scale * c;
  }

  Measure mu(detail::product_measure_weights(layout, marginals));
  std::vector<Subspace> subspaces;
  for (int a = 0; a < n_axes; ++a) {
    const bool center = mean_zero && a + 1 < n_axes;
    subspaces.push_back(orthonormalize(
        detail::marginal_indicator_basis(layout, a, marginals[a].weights, center), mu,
        kDefaultRankTol, "marginal_" + std::to_string(a + 1)));
  }
  DiscreteSpace space{layout.total, detail::product_labels(layout)};
  return make_instance(std::move(space), std::move(mu), std::move(cost), 1.0,
                       make_divergence(kind), std::move(subspaces));
}

// Two-marginal transport instance with a random bounded cost.
inline Instance gen_ot2(std::uint64_t seed, int n1, int n2, bool mean_zero = false,
                        DivergenceKind kind = DivergenceKind::kl,
                        double cost_scale = 1.0) {
  if (n1 < 2 || n2 < 2) throw Error("gen_ot2 needs at least two atoms per marginal");
  Rng rng(seed);
  detail::ProductLayout layout({n1, n2});
  std::vector<Marginal> marginals{
      {detail::equispaced_atoms(n1), detail::random_weights(rng, n1)},
      {detail::equispaced_atoms(n2), detail::random_weights(rng, n2)}};
  Vector cost(layout.total);
  for (int x = 0; x < layout.total; ++x) cost[x] = cost_scale * rng.uniform();

  Measure mu(detail::product_measure_weights(layout, marginals));
  std::vector<Subspace> subspaces;
  for (int a = 0; a < 2; ++a)
    subspaces.push_back(orthonormalize(
        detail::marginal_indicator_basis(layout, a, marginals[a].weights,
                                         mean_zero && a == 0),
        mu, kDefaultRankTol, "marginal_" + std::to_string(a + 1)));
  DiscreteSpace space{layout.total, detail::product_labels(layout)};
  return make_instance(std::move(space), std::move(mu), std::move(cost), 1.0,
                       make_divergence(kind), std::move(subspaces));
}

struct ConvexOrderResult {
  bool holds = false;
  double worst_violation = 0.0;  // most negative call-payoff difference
  double at_strike = 0.0;
  double mean_gap = 0.0;
};

// mu1 <=_c mu2 for discrete measures: equal means and, at every atom k of
// either support, integral of (x - k)+ under mu1 <= under mu2. Piecewise
// linearity makes the kink points sufficient.
inline ConvexOrderResult convex_order_check(const Marginal& m1, const Marginal& m2) {
  check_same_length("convex order: atoms vs weights of first marginal",
                    m1.atoms.size(), m1.weights.size());
  check_same_length("convex order: atoms vs weights of second marginal",
                    m2.atoms.size(), m2.weights.size());
  ConvexOrderResult res;
  res.mean_gap = std::abs(m1.atoms.dot(m1.weights) - m2.atoms.dot(m2.weights));
  auto call = [](const Marginal& m, double k) {
    double v = 0.0;
    for (int i = 0; i < m.atoms.size(); ++i)
      v += m.weights[i] * std::max(m.atoms[i] - k, 0.0);
    return v;
  };
  double worst = 0.0, at = 0.0;
  auto scan = [&](const Vector& ks) {
    for (int i = 0; i < ks.size(); ++i) {
      const double d = call(m2, ks[i]) - call(m1, ks[i]);
      if (d < worst) {
        worst = d;
        at = ks[i];
      }
    }
  };
  scan(m1.atoms);
  scan(m2.atoms);
  res.worst_violation = worst;
  res.at_strike = at;
  res.holds = res.mean_gap <= 1e-10 && worst >= -1e-12;
  return res;
}

struct MotAngleBound {
  double bound = 0.0;            // a / sqrt(a^2 + v2), a = support radius (sharp)
  double diameter_reading = 0.0; // same formula with 2a in place of a
  double a = 0.0;
  double v2 = 0.0;
};

inline MotAngleBound mot_angle_bound(double a, double v2) {
  if (!(a > 0.0)) throw Error("angle bound needs a nondegenerate first marginal (a > 0)");
  if (!(v2 > 0.0)) throw Error("angle bound needs a spread second marginal (v2 > 0)");
  MotAngleBound out;
  out.a = a;
  out.v2 = v2;
  out.bound = a / std::sqrt(a * a + v2);
  const double d = 2.0 * a;
  out.diameter_reading = d / std::sqrt(d * d + v2);
  return out;
}

struct MotConditionBound {
  double norm_S = std::sqrt(2.0);
  double inv_bound_sharp = 0.0;         // sqrt(sup 1/p / sup p) (1 - bound)^{-1/2}
  double inv_bound_conservative = 0.0;  // sqrt(sup p * sup 1/p) (1 - bound)^{-1/2}
  double condition_bound_sharp = 0.0;
  double condition_bound_conservative = 0.0;
};

// Condition bounds under a reference density p relative to the product
// measure. Two readings of the distortion factor are reported; the
// conservative one is the provable norm-equivalence constant.
inline MotConditionBound mot_condition_bound(double p_sup, double p_inv_sup,
                                             double angle_bound) {
  if (!(p_sup > 0.0) || !(p_inv_sup > 0.0))
    throw Error("distortion bounds must be positive");
  if (angle_bound < 0.0 || angle_bound >= 1.0)
    throw Error("angle bound must lie in [0, 1)");
  MotConditionBound out;
  const double base = 1.0 / std::sqrt(1.0 - angle_bound);
  out.inv_bound_sharp = std::sqrt(p_inv_sup / p_sup) * base;
  out.inv_bound_conservative = std::sqrt(p_sup * p_inv_sup) * base;
  out.condition_bound_sharp = out.norm_S * out.inv_bound_sharp;
  out.condition_bound_conservative = out.norm_S * out.inv_bound_conservative;
  return out;
}

struct MotSpec {
  Marginal m1, m2;  // zero-mean, m1 <=_c m2
  enum class Reference { product, distorted };
  Reference reference = Reference::product;
  Vector distortion;  // positive density vs the product measure (distorted only)
  enum class TargetsMode { martingale, reference_moments };
  TargetsMode targets_mode = TargetsMode::martingale;

  double a() const { return m1.atoms.cwiseAbs().maxCoeff(); }
  double v2() const { return (m2.weights.array() * m2.atoms.array().square()).sum(); }
};

// Orthonormal-coordinate targets from moments prescribed on the raw columns.
// Consistent raw moments (annihilating the raw null space) determine the
// functional uniquely.
inline Vector raw_moments_to_targets(const Subspace& s, const Vector& raw_moments) {
  check_same_length("raw moments vs raw basis columns", s.raw_basis.cols(),
                    raw_moments.size());
  Matrix coeff = Eigen::CompleteOrthogonalDecomposition<Matrix>(s.raw_basis)
                     .solve(s.ortho_basis);  // raw * coeff = ortho
  return coeff.transpose() * raw_moments;
}

// Martingale transport instance: H1 = marginal functions f1(x1) + f2(x2),
// H2 = trading strategies q(x1) (x2 - x1). Intersection of the closures is
// the line spanned by x2 - x1.
inline Instance gen_mot(const MotSpec& spec, const Matrix& cost_grid,
                        DivergenceKind kind = DivergenceKind::kl) {
  const int k1 = static_cast<int>(spec.m1.atoms.size());
  const int k2 = static_cast<int>(spec.m2.atoms.size());
  if (k1 < 2 || k2 < 2) throw Error("gen_mot needs at least two atoms per marginal");
  check_same_length("gen_mot: first marginal atoms vs weights", k1,
                    spec.m1.weights.size());
  check_same_length("gen_mot: second marginal atoms vs weights", k2,
                    spec.m2.weights.size());
  check_same_length("gen_mot: cost rows vs first marginal", k1, cost_grid.rows());
  check_same_length("gen_mot: cost cols vs second marginal", k2, cost_grid.cols());
  if (std::abs(spec.m1.atoms.dot(spec.m1.weights)) > 1e-12 ||
      std::abs(spec.m2.atoms.dot(spec.m2.weights)) > 1e-12)
    throw Error("gen_mot marginals must be centered (zero means)");
  ConvexOrderResult order = convex_order_check(spec.m1, spec.m2);
  if (!order.holds)
    throw Error("gen_mot marginals are not in convex order (violation " +
                std::to_string(order.worst_violation) + " at strike " +
                std::to_string(order.at_strike) + "); no martingale coupling exists");

  detail::ProductLayout layout({k1, k2});
  Vector w = detail::product_measure_weights(layout, {spec.m1, spec.m2});
  if (spec.reference == MotSpec::Reference::distorted) {
    check_same_length("gen_mot: distortion density vs grid", layout.total,
                      spec.distortion.size());
    if ((spec.distortion.array() <= 0.0).any())
      throw Error("gen_mot distortion density must be strictly positive");
    w = w.array() * spec.distortion.array();
    w /= w.sum();
  }
  Measure mu(std::move(w));

  Matrix raw1(layout.total, k1 + k2);
  raw1.setZero();
  Matrix raw2 = Matrix::Zero(layout.total, k1);
  Vector cost(layout.total);
  for (int x = 0; x < layout.total; ++x) {
    const int a = layout.coord(x, 0), b = layout.coord(x, 1);
    raw1(x, a) = 1.0;
    raw1(x, k1 + b) = 1.0;
    raw2(x, a) = spec.m2.atoms[b] - spec.m1.atoms[a];
    cost[x] = cost_grid(a, b);
  }
  std::vector<Subspace> subspaces{
      orthonormalize(raw1, mu, kDefaultRankTol, "marginals"),
      orthonormalize(raw2, mu, kDefaultRankTol, "martingale")};

  std::optional<std::vector<Vector>> targets;
  if (spec.targets_mode == MotSpec::TargetsMode::martingale) {
    Vector m(k1 + k2);
    m.head(k1) = spec.m1.weights;
    m.tail(k2) = spec.m2.weights;
    targets = std::vector<Vector>{raw_moments_to_targets(subspaces[0], m),
                                  Vector::Zero(subspaces[1].rank)};
  }
  DiscreteSpace space{layout.total, detail::product_labels(layout)};
  return make_instance(std::move(space), std::move(mu), std::move(cost), 1.0,
                       make_divergence(kind), std::move(subspaces), std::move(targets));
}

// Canonical small martingale instance: x1 = {-1/2, 1/2} uniform,
// x2 = {-1, 0, 1} with weights (3/8, 1/4, 3/8); quadratic cost plus seeded
// noise. The angle bound is exactly 1/2 here.
inline Instance gen_mot_default(std::uint64_t seed,
                                DivergenceKind kind = DivergenceKind::kl,
                                bool distorted = false) {
  MotSpec spec;
  spec.m1 = {Vector{{-0.5, 0.5}}, Vector{{0.5, 0.5}}};
  spec.m2 = {Vector{{-1.0, 0.0, 1.0}}, Vector{{0.375, 0.25, 0.375}}};
  Rng rng(seed);
  Matrix cost(2, 3);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 3; ++b) {
      const double d = spec.m2.atoms[b] - spec.m1.atoms[a];
      cost(a, b) = d * d + 0.1 * rng.uniform();
    }
  if (distorted) {
    spec.reference = MotSpec::Reference::distorted;
    Vector p(6);
    for (int i = 0; i < 6; ++i) p[i] = 0.5 + 1.5 * rng.uniform();
    spec.distortion = p;
  }
  return gen_mot(spec, cost, kind);
}

enum class MuProfile { uniform, random };

struct RandomInstanceSpec {
  std::uint64_t seed = 0;
  int n = 8;
  int N = 2;
  std::vector<int> ranks;  // raw column counts per subspace; default 2 each
  MuProfile mu_profile = MuProfile::random;
  int shared_dims = 0;  // common directions inserted into the first two blocks
  double cost_scale = 1.0;
  DivergenceKind divergence = DivergenceKind::kl;
};

// Seeded well-conditioned random instance; draws are rejected until the
// standing assumption holds and delta stays above 1e-6.
inline Instance gen_random(const RandomInstanceSpec& spec) {
  if (spec.n < 2) throw Error("gen_random needs at least two atoms");
  if (spec.N < 1) throw Error("gen_random needs at least one subspace");
  if (spec.shared_dims > 0 && spec.N < 2)
    throw Error("shared directions need at least two subspaces");
  std::vector<int> ranks = spec.ranks;
  if (ranks.empty()) ranks.assign(spec.N, 2);
  check_same_length("gen_random: ranks vs subspace count", spec.N, ranks.size());
  for (int r : ranks)
    if (r < 1 || r + spec.shared_dims >= spec.n)
      throw Error("gen_random ranks must fit strictly inside the space");

  Rng rng(spec.seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Vector w(spec.n);
    if (spec.mu_profile == MuProfile::uniform)
      w.setConstant(1.0 / spec.n);
    else
      w = detail::random_weights(rng, spec.n);
    Measure mu(std::move(w));

    Matrix shared(spec.n, spec.shared_dims);
    for (int i = 0; i < shared.size(); ++i)
      shared.data()[i] = rng.uniform(-1.0, 1.0);

    std::vector<Subspace> subspaces;
    bool rank_ok = true;
    for (int i = 0; i < spec.N; ++i) {
      const bool gets_shared = spec.shared_dims > 0 && i < 2;
      Matrix raw(spec.n, ranks[i] + (gets_shared ? spec.shared_dims : 0));
      int col = 0;
      if (gets_shared) {
        raw.leftCols(spec.shared_dims) = shared;
        col = spec.shared_dims;
      }
      for (int c = col; c < raw.cols(); ++c)
        for (int r = 0; r < spec.n; ++r) raw(r, c) = rng.uniform(-1.0, 1.0);
      Subspace s = orthonormalize(raw, mu, kDefaultRankTol,
                                  "random_" + std::to_string(i + 1));
      if (s.rank != raw.cols()) rank_ok = false;
      subspaces.push_back(std::move(s));
    }
    if (!rank_ok) continue;

    SumOperator op = assemble_sum_operator(subspaces, mu);
    if (!op.standing_violations.empty()) continue;
    if (op.sigma_min_plus() < 1e-6) continue;
    if (spec.shared_dims > 0 && op.kernel_dim() < spec.shared_dims) continue;

    Vector cost(spec.n);
    for (int x = 0; x < spec.n; ++x)
      cost[x] = spec.cost_scale * rng.uniform(-0.5, 0.5);
    DiscreteSpace space{spec.n, {}};
    return make_instance(std::move(space), std::move(mu), std::move(cost), 1.0,
                         make_divergence(spec.divergence), std::move(subspaces));
  }
  throw Error("gen_random could not draw a well-conditioned instance from seed " +
              std::to_string(spec.seed));
}

struct TwoSubspacePair {
  Measure mu;
  Subspace s1, s2;
  int intersection_dim = 0;  // constructed dimension, verified by the draw
};

// Random pair with a prescribed exact intersection dimension; rejected until
// the measured geometry is clean (no containment, angle away from 1,
// delta above 1e-6).
inline TwoSubspacePair gen_two_subspace_pair(std::uint64_t seed) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const int n = rng.uniform_int(4, 12);
    const int m_options[4] = {0, 0, 1, 2};
    const int m = m_options[rng.uniform_int(0, 3)];
    const int d1 = rng.uniform_int(1, 3), d2 = rng.uniform_int(1, 3);
    if (m + d1 > n - 1 || m + d2 > n - 1) continue;

    Vector w = detail::random_weights(rng, n);
    Measure mu(std::move(w));
    Matrix shared(n, m);
    for (int i = 0; i < shared.size(); ++i) shared.data()[i] = rng.uniform(-1.0, 1.0);
    Matrix raw1(n, m + d1), raw2(n, m + d2);
    raw1.leftCols(m) = shared;
    raw2.leftCols(m) = shared;
    for (int c = m; c < raw1.cols(); ++c)
      for (int r = 0; r < n; ++r) raw1(r, c) = rng.uniform(-1.0, 1.0);
    for (int c = m; c < raw2.cols(); ++c)
      for (int r = 0; r < n; ++r) raw2(r, c) = rng.uniform(-1.0, 1.0);

    Subspace s1 = orthonormalize(raw1, mu, kDefaultRankTol, "pair_1");
    Subspace s2 = orthonormalize(raw2, mu, kDefaultRankTol, "pair_2");
    if (s1.rank != raw1.cols() || s2.rank != raw2.cols()) continue;

    AngleReport angle;
    try {
      angle = friedrichs_angle(s1, s2, mu);
    } catch (const SubspaceError&) {
      continue;
    }
    if (angle.dim_intersection != m) continue;
    if (angle.cos_angle > 1.0 - 1e-6) continue;
    SumOperator op = assemble_sum_operator({s1, s2}, mu);
    if (op.sigma_min_plus() < 1e-6) continue;
    return TwoSubspacePair{std::move(mu), std::move(s1), std::move(s2), m};
  }
  throw Error("gen_two_subspace_pair exhausted redraws for seed " +
              std::to_string(seed));
}

// Cost that turns the kl problem into the information projection onto theta:
// c = log(dmu/dtheta) pointwise.
inline Vector from_projection(const Measure& theta, const Measure& mu) {
  check_same_length("from_projection: theta size vs mu size", mu.size(), theta.size());
  Vector c(mu.size());
  for (int x = 0; x < mu.size(); ++x) c[x] = std::log(mu[x] / theta[x]);
  return c;
}

}  // namespace ipfp
