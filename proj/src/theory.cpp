#include "fedpaq/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fedpaq/error.hpp"

namespace fedpaq::theory {
namespace {

void check_nodes(std::int64_t n, std::int64_t r) {
  if (n < 2) {
    throw InvalidInput("theory: constants need n >= 2 (got n = " + std::to_string(n) + ")");
  }
  if (r < 1 || r > n) {
    throw InvalidInput("theory: r = " + std::to_string(r) + " must be in [1, n = " + std::to_string(n) + "]");
  }
}

}  // namespace

double participation_factor(double n, double r) { return (n - r) / (r * (n - 1.0)); }

StronglyConvexConstants thm1_constants(double q, std::int64_t n, std::int64_t r, double L, double mu,
                                       double sigma2) {
  check_nodes(n, r);
  if (!(mu > 0.0)) {
    throw InvalidInput("theory: strong convexity mu must be positive");
  }
  const double dn = static_cast<double>(n);
  const double pf = participation_factor(dn, static_cast<double>(r));
  const double e = std::numbers::e;
  const double mu2 = mu * mu;

  StronglyConvexConstants c;
  c.b1 = 2.0 * L * L * (q / dn + pf * 4.0 * (1.0 + q));
  c.c1 = 16.0 * sigma2 / (mu2 * dn) * (1.0 + 2.0 * q + 8.0 * (1.0 + q) * dn * pf);
  c.c2 = 16.0 * e * L * L * sigma2 / (mu2 * dn);
  c.c3 = 256.0 * e * L * L * sigma2 / (mu2 * mu2 * dn) * (dn + 2.0 * q + 8.0 * (1.0 + q) * dn * pf);
  return c;
}

std::int64_t thm1_k0(double L, double mu, double b1, std::int64_t n, std::int64_t tau) {
  if (!(mu > 0.0) || tau < 1) {
    throw InvalidInput("theory: k0 needs mu > 0 and tau >= 1");
  }
  const double dt = static_cast<double>(tau);
  const double bound = 4.0 * std::max({L / mu, 4.0 * (b1 / (mu * mu) + 1.0), 1.0 / dt,
                                       4.0 * static_cast<double>(n) / (mu * mu * dt)});
  // Absorb rounding in the last place so an exact integer is not bumped up.
  const double k0 = std::ceil(bound * (1.0 - 1e-12));
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(k0));
}

double thm1_bound(std::int64_t k, std::int64_t k0, std::int64_t tau, const StronglyConvexConstants& c,
                  double initial_gap) {
  if (k < k0) {
    throw InvalidInput("theory: bound holds only for k >= k0 (k = " + std::to_string(k) +
                       ", k0 = " + std::to_string(k0) + ")");
  }
  const double t = static_cast<double>(tau);
  const double kt = static_cast<double>(k) * t + 1.0;
  const double k0t = static_cast<double>(k0) * t + 1.0;
  return (k0t * k0t) / (kt * kt) * initial_gap + c.c1 * t / kt + c.c2 * (t - 1.0) * (t - 1.0) / kt +
         c.c3 * (t - 1.0) / (kt * kt);
}

NonConvexConstants thm2_constants(double q, std::int64_t n, std::int64_t r, double sigma2) {
  check_nodes(n, r);
  const double dn = static_cast<double>(n);
  const double pf = participation_factor(dn, static_cast<double>(r));
  NonConvexConstants c;
  c.b2 = q / dn + 4.0 * pf * (1.0 + q);
  c.n1 = (1.0 + q) * sigma2 / dn * (1.0 + dn * pf);
  c.n2 = sigma2 / dn * (dn + 1.0);
  return c;
}

double thm2_tau_max(std::int64_t T, double b2) {
  if (T < 2) {
    throw InvalidInput("theory: the non-convex guarantee needs T >= 2 (got " + std::to_string(T) + ")");
  }
  return (std::sqrt(b2 * b2 + 0.8) - b2) / 8.0 * std::sqrt(static_cast<double>(T));
}

double thm2_bound(std::int64_t T, std::int64_t tau, double L, double f0_gap, double n1, double n2) {
  if (T < 2) {
    throw InvalidInput("theory: the non-convex guarantee needs T >= 2 (got " + std::to_string(T) + ")");
  }
  const double dT = static_cast<double>(T);
  const double root = std::sqrt(dT);
  return 2.0 * L * f0_gap / root + n1 / root + n2 * (static_cast<double>(tau) - 1.0) / dT;
}

TheoremConstants evaluate(double q, std::int64_t n, std::int64_t r, double L, double mu, double sigma2,
                          std::int64_t tau, std::int64_t T) {
  TheoremConstants out;
  out.q = q;
  out.n = n;
  out.r = r;
  out.L = L;
  out.mu = mu;
  out.sigma2 = sigma2;
  out.tau = tau;
  out.T = T;
  out.nc = thm2_constants(q, n, r, sigma2);
  out.tau_max = T >= 2 ? thm2_tau_max(T, out.nc.b2) : 0.0;
  if (mu > 0.0) {
    out.has_strongly_convex = true;
    out.sc = thm1_constants(q, n, r, L, mu, sigma2);
    out.k0 = thm1_k0(L, mu, out.sc.b1, n, tau);
  }
  return out;
}

}  // namespace fedpaq::theory
