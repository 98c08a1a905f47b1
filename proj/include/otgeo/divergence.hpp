// The lambda-divergence family on the simplex: reference-distribution
// variants, the Bregman-like form built from the Cuturi function, and the
// lambda -> 0 closed form.
#pragma once

#include "otgeo/core.hpp"
#include "otgeo/geometry.hpp"
#include "otgeo/sinkhorn.hpp"

namespace otgeo {

enum class ReferenceRule { SourceP, ArithmeticMean, GeometricMean };
enum class ScalingFactorRule { LambdaOverOnePlusLambda, Unit };

inline double scaling_factor(ScalingFactorRule rule, double lambda) {
  return rule == ScalingFactorRule::LambdaOverOnePlusLambda ? lambda / (1.0 + lambda) : 1.0;
}

inline ProbabilityVector reference_distribution(ReferenceRule rule, const ProbabilityVector& p,
                                                const ProbabilityVector& q) {
  switch (rule) {
    case ReferenceRule::SourceP:
      return p;
    case ReferenceRule::ArithmeticMean:
      return ProbabilityVector::interior(0.5 * (p.values() + q.values()));
    case ReferenceRule::GeometricMean: {
      Vector r = (p.values().array() * q.values().array()).sqrt();
      return ProbabilityVector::interior(std::move(r), /*renormalize=*/true);
    }
  }
  throw InvalidArgument("unknown reference rule");
}

// D_{r,lambda}[p:q] = gamma * KL[P*(r,p) : P*(r,q)] with r chosen by `ref`.
inline double lambda_divergence(const CostMatrix& M, const ProbabilityVector& p,
                                const ProbabilityVector& q, double lambda,
                                ReferenceRule ref = ReferenceRule::SourceP,
                                ScalingFactorRule scale = ScalingFactorRule::LambdaOverOnePlusLambda,
                                const Tolerance& tol = Tolerance()) {
  if (p.size() != q.size()) throw InvalidArgument("lambda_divergence: dimension mismatch");
  const ProbabilityVector r = reference_distribution(ref, p, q);
  const SinkhornResult rp = sinkhorn_solve(M, r, p, lambda, tol);
  const SinkhornResult rq = sinkhorn_solve(M, r, q, lambda, tol);
  // Log-domain plan KL; identical to kl_divergence(rp.plan, rq.plan) but
  // robust when kernel entries underflow on large grids.
  return scaling_factor(scale, lambda) * kl_optimal_plans(rp, rq);
}

// D_lambda[p:q] = C(p,p) - C(p,q) - grad_q C(p,q).(p - q), with the gradient
// taken from the dual solution (beta).  Equals the source-referenced,
// gamma-scaled KL route.
inline double bregman_like_divergence(const CostMatrix& M, const ProbabilityVector& p,
                                      const ProbabilityVector& q, double lambda,
                                      const Tolerance& tol = Tolerance()) {
  if (p.size() != q.size()) throw InvalidArgument("bregman_like_divergence: dimension mismatch");
  const SinkhornResult rpp = sinkhorn_solve(M, p, p, lambda, tol);
  const SinkhornResult rpq = sinkhorn_solve(M, p, q, lambda, tol);
  const double cpp = cuturi_value(M, rpp.plan.entries(), lambda);
  const double cpq = cuturi_value(M, rpq.plan.entries(), lambda);
  const DualPotentials d = potentials_from_scaling(rpq.scaling);
  // beta is gauge-fixed; the dot with p - q (which sums to zero) is
  // gauge-invariant anyway.
  return cpp - cpq - d.beta.dot(p.values() - q.values());
}

// Closed form of the unscaled KL limit as lambda -> 0 for zero-diagonal,
// positive off-diagonal costs: sum over p_i > q_i of p_i log(p_i / q_i).
inline double lambda_zero_divergence(const ProbabilityVector& p, const ProbabilityVector& q) {
  if (p.size() != q.size()) throw InvalidArgument("lambda_zero_divergence: dimension mismatch");
  double d = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > q[i]) d += p[i] * std::log(p[i] / q[i]);
  return d;
}

// Experimental: min over the reference r of gamma * KL[P*(p,r) : P*(q,r)] by
// brute-force simplex grid search.  Only sensible for n <= 3; no gradient
// algorithm is attempted.
inline double min_reference_divergence(const CostMatrix& M, const ProbabilityVector& p,
                                       const ProbabilityVector& q, double lambda,
                                       int grid = 20,
                                       ScalingFactorRule scale =
                                           ScalingFactorRule::LambdaOverOnePlusLambda,
                                       const Tolerance& tol = Tolerance()) {
  const Eigen::Index n = p.size();
  if (n > 3) throw InvalidArgument("min_reference_divergence: brute-force search needs n <= 3");
  const double gamma = scaling_factor(scale, lambda);
  double best = std::numeric_limits<double>::infinity();
  auto eval = [&](const Vector& rv) {
    const ProbabilityVector r = ProbabilityVector::interior(rv, /*renormalize=*/true);
    const SinkhornResult pr = sinkhorn_solve(M, p, r, lambda, tol);
    const SinkhornResult qr = sinkhorn_solve(M, q, r, lambda, tol);
    best = std::min(best, gamma * kl_divergence(pr.plan, qr.plan));
  };
  if (n == 2) {
    for (int i = 1; i < grid; ++i) {
      Vector r(2);
      r << static_cast<double>(i) / grid, 1.0 - static_cast<double>(i) / grid;
      eval(r);
    }
  } else {
    for (int i = 1; i < grid; ++i)
      for (int j = 1; i + j < grid; ++j) {
        Vector r(3);
        r << static_cast<double>(i) / grid, static_cast<double>(j) / grid,
            static_cast<double>(grid - i - j) / grid;
        eval(r);
      }
  }
  return best;
}

}  // namespace otgeo
