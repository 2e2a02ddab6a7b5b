#pragma once

// Constants, step-size conditions and right-hand sides of the FedPAQ
// convergence guarantees, for comparison against simulated runs.
//
// Shared inputs: q (quantizer variance parameter), n nodes, r participants
// per round, L smoothness, mu strong convexity, sigma2 stochastic gradient
// variance, tau local iterations per round, T total iterations.

#include <cstdint>

namespace fedpaq::theory {

/// Strongly convex case.
struct StronglyConvexConstants {
  double b1 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
};

/// Non-convex case.
struct NonConvexConstants {
  double b2 = 0.0;
  double n1 = 0.0;
  double n2 = 0.0;
};

/// (n - r) / (r (n - 1)), the partial-participation factor. n >= 2.
double participation_factor(double n, double r);

StronglyConvexConstants thm1_constants(double q, std::int64_t n, std::int64_t r, double L, double mu,
                                       double sigma2);

/// Smallest integer k0 >= 4 max{L/mu, 4 (B1/mu^2 + 1), 1/tau, 4n/(mu^2 tau)}.
std::int64_t thm1_k0(double L, double mu, double b1, std::int64_t n, std::int64_t tau);

/// Upper bound on E||x_k - x*||^2 for k >= k0. Throws InvalidInput if k < k0.
double thm1_bound(std::int64_t k, std::int64_t k0, std::int64_t tau, const StronglyConvexConstants& c,
                  double initial_gap);

NonConvexConstants thm2_constants(double q, std::int64_t n, std::int64_t r, double sigma2);

/// (sqrt(B2^2 + 0.8) - B2) / 8 * sqrt(T). Throws InvalidInput if T < 2.
double thm2_tau_max(std::int64_t T, double b2);

/// 2 L (f(x0) - f*) / sqrt(T) + N1 / sqrt(T) + N2 (tau - 1) / T.
double thm2_bound(std::int64_t T, std::int64_t tau, double L, double f0_gap, double n1, double n2);

/// Everything above for one configuration, with the inputs echoed.
struct TheoremConstants {
  double q = 0.0;
  std::int64_t n = 0;
  std::int64_t r = 0;
  double L = 0.0;
  double mu = 0.0;  // 0 when the objective is not strongly convex
  double sigma2 = 0.0;
  std::int64_t tau = 1;
  std::int64_t T = 0;

  bool has_strongly_convex = false;
  StronglyConvexConstants sc;
  std::int64_t k0 = 0;

  NonConvexConstants nc;
  double tau_max = 0.0;  // 0 when T < 2
};

TheoremConstants evaluate(double q, std::int64_t n, std::int64_t r, double L, double mu, double sigma2,
                          std::int64_t tau, std::int64_t T);

}  // namespace fedpaq::theory
