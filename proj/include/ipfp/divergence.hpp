#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "ipfp/errors.hpp"
#include "ipfp/space.hpp"

namespace ipfp {

enum class DivergenceKind { kl, quadratic };

// A phi-divergence together with its convex conjugate psi and the local
// convexity constants on (-R, R):
//   kl:        phi(x) = x log x - x + 1 on [0, inf),  psi(s) = e^s - 1
//   quadratic: phi(x) = (x - 1)^2 / 2 on R,           psi(s) = s^2/2 + s
struct Divergence {
  DivergenceKind kind = DivergenceKind::kl;

  double psi(double s) const {
    return kind == DivergenceKind::kl ? std::expm1(s) : 0.5 * s * s + s;
  }
  double psi_prime(double s) const {
    return kind == DivergenceKind::kl ? std::exp(s) : s + 1.0;
  }
  double psi_second(double s) const {
    return kind == DivergenceKind::kl ? std::exp(s) : 1.0;
  }

  double phi(double x) const {
    if (kind == DivergenceKind::kl) {
      if (x < 0.0) throw Error("kl divergence needs a nonnegative density value, got " +
                               std::to_string(x));
      if (x == 0.0) return 1.0;  // limit of x log x - x + 1
      return x * std::log(x) - x + 1.0;
    }
    return 0.5 * (x - 1.0) * (x - 1.0);
  }

  // inf / sup of psi'' over (-R, R)
  double sigma(double R) const {
    if (R < 0.0) throw Error("radius must be nonnegative");
    return kind == DivergenceKind::kl ? std::exp(-R) : 1.0;
  }
  double lipschitz(double R) const {
    if (R < 0.0) throw Error("radius must be nonnegative");
    return kind == DivergenceKind::kl ? std::exp(R) : 1.0;
  }

  std::string_view name() const {
    return kind == DivergenceKind::kl ? "kl" : "quadratic";
  }
};

inline Divergence make_divergence(DivergenceKind kind) { return Divergence{kind}; }

inline Divergence make_divergence(std::string_view name) {
  if (name == "kl") return Divergence{DivergenceKind::kl};
  if (name == "quadratic") return Divergence{DivergenceKind::quadratic};
  throw Error("unknown divergence '" + std::string(name) + "' (expected kl or quadratic)");
}

// D_phi(pi || mu) for a density rho = d pi / d mu given pointwise.
inline double primal_divergence(const Vector& density, const Measure& mu,
                                const Divergence& div) {
  check_same_length("primal divergence: density length vs mu size", mu.size(),
                    density.size());
  double total = 0.0;
  for (int i = 0; i < density.size(); ++i) total += mu[i] * div.phi(density[i]);
  return total;
}

struct FenchelReport {
  double max_equality_gap = 0.0;   // |psi(s) - (s x* - phi(x*))| at x* = psi'(s)
  double min_young_margin = 0.0;   // min over sampled pairs of psi(s) + phi(x) - s x
};

// Checks the conjugacy psi(s) = sup_x { s x - phi(x) } on a grid of s values:
// equality at the maximizer x* = psi'(s), and the Fenchel-Young inequality on
// all sampled (s, x) pairs.
inline FenchelReport fenchel_audit(const Divergence& div, const Vector& s_grid) {
  if (s_grid.size() == 0) throw Error("fenchel_audit needs a nonempty grid");
  FenchelReport rep;
  rep.min_young_margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < s_grid.size(); ++i) {
    const double s = s_grid[i];
    const double xstar = div.psi_prime(s);
    rep.max_equality_gap = std::max(
        rep.max_equality_gap, std::abs(div.psi(s) - (s * xstar - div.phi(xstar))));
    for (int j = 0; j < s_grid.size(); ++j) {
      const double x = div.psi_prime(s_grid[j]);  // stays inside dom phi
      rep.min_young_margin =
          std::min(rep.min_young_margin, div.psi(s) + div.phi(x) - s * x);
    }
  }
  return rep;
}

}  // namespace ipfp
