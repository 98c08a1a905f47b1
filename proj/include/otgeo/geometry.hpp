// Dual potentials and the information geometry of optimal transportation
// plans: the Cuturi function as dual potential, Legendre identities, Fisher
// information blocks in reduced coordinates, and the canonical divergence.
#pragma once

#include "otgeo/core.hpp"
#include "otgeo/sinkhorn.hpp"

#include <Eigen/Dense>

namespace otgeo {

// Lagrangian duals (alpha, beta) with the gauge alpha_s = beta_r = 0 and the
// potential psi = -(lambda/(1+lambda)) log c absorbed accordingly.
struct DualPotentials {
  Vector alpha;
  Vector beta;
  double psi = 0.0;
  double lambda = 0.0;
};

// alpha_i = (lambda/(1+lambda)) log a_i in the a_s = b_r = 1 gauge, likewise
// beta; psi from the matching normalizer.
inline DualPotentials potentials_from_scaling(const ScalingSolution& s) {
  const ScalingSolution t = to_gauge(s, Gauge::LastEntryOne);
  const double w = t.lambda / (1.0 + t.lambda);
  DualPotentials d;
  d.alpha = w * t.a.array().log();
  d.beta = w * t.b.array().log();
  d.psi = -w * t.log_c;
  d.lambda = t.lambda;
  return d;
}

// Rebuilds P_ij = exp{(1+lambda)/lambda (alpha_i + beta_j - psi) - m_ij/lambda}.
inline Matrix plan_from_potentials(const DualPotentials& d, const CostMatrix& M) {
  const double w = (1.0 + d.lambda) / d.lambda;
  Matrix P(d.alpha.size(), d.beta.size());
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j)
      P(i, j) = std::exp(w * (d.alpha[i] + d.beta[j] - d.psi) - M(i, j) / d.lambda);
  return P;
}

// psi as an explicit function of (alpha, beta): the normalizer of the
// exponential family, no transportation solve involved.  Used directly by
// the finite-difference probes of the Legendre structure.
inline double psi_value(const CostMatrix& M, const Vector& alpha, const Vector& beta,
                        double lambda) {
  const double w = (1.0 + lambda) / lambda;
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      m = std::max(m, w * (alpha[i] + beta[j]) - M(i, j) / lambda);
  double s = 0.0;
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      s += std::exp(w * (alpha[i] + beta[j]) - M(i, j) / lambda - m);
  return (m + std::log(s)) / w;
}

// C_lambda at a given plan: (<M,P> - lambda H(P)) / (1 + lambda).
inline double cuturi_value(const CostMatrix& M, const Matrix& plan, double lambda) {
  return ((M.entries().array() * plan.array()).sum() - lambda * detail::entropy(plan)) /
         (1.0 + lambda);
}

// The Cuturi function C_lambda(p, q), i.e. the dual potential phi_lambda.
inline double cuturi_function(const CostMatrix& M, const ProbabilityVector& p,
                              const ProbabilityVector& q, double lambda,
                              const Tolerance& tol = Tolerance()) {
  const SinkhornResult r = sinkhorn_solve(M, p, q, lambda, tol);
  return cuturi_value(M, r.plan.entries(), lambda);
}

// |psi + phi - alpha.p - beta.q| in the canonical gauge; ~0 at convergence.
inline double legendre_residual(const CostMatrix& M, const ProbabilityVector& p,
                                const ProbabilityVector& q, double lambda,
                                const Tolerance& tol = Tolerance()) {
  const SinkhornResult r = sinkhorn_solve(M, p, q, lambda, tol);
  const DualPotentials d = potentials_from_scaling(r.scaling);
  const double phi = cuturi_value(M, r.plan.entries(), lambda);
  return std::abs(d.psi + phi - d.alpha.dot(p.values()) - d.beta.dot(q.values()));
}

// Fisher information blocks of the optimal-plan family, reduced to the gauge-fixed
// (s-1)+(r-1) coordinates:
//   [ p_i d_ij - p_i p_j   |  P_ij - p_i q_j ]
//   [ (P_ij - p_i q_j)^T   |  q_i d_ij - q_i q_j ]
inline Matrix fisher_info_theta(const TransportPlan& P) {
  if (P.entries().minCoeff() <= 0.0)
    throw InvalidArgument("fisher_info_theta: plan must be strictly positive");
  const Eigen::Index s = P.rows(), r = P.cols();
  const Vector p = P.row_sums(), q = P.col_sums();
  const Eigen::Index ds = s - 1, dr = r - 1;
  Matrix G(ds + dr, ds + dr);
  for (Eigen::Index i = 0; i < ds; ++i)
    for (Eigen::Index j = 0; j < ds; ++j)
      G(i, j) = (i == j ? p[i] : 0.0) - p[i] * p[j];
  for (Eigen::Index i = 0; i < dr; ++i)
    for (Eigen::Index j = 0; j < dr; ++j)
      G(ds + i, ds + j) = (i == j ? q[i] : 0.0) - q[i] * q[j];
  for (Eigen::Index i = 0; i < ds; ++i)
    for (Eigen::Index j = 0; j < dr; ++j) {
      const double c = P(i, j) - p[i] * q[j];
      G(i, ds + j) = c;
      G(ds + j, i) = c;
    }
  return G;
}

// Hessian blocks of phi_lambda = C_lambda in the reduced eta coordinates
// (p_1..p_{s-1}, q_1..q_{r-1}), obtained by inverting the psi Hessian
// (1+lambda)/lambda * fisher_info_theta at the optimal plan.
struct MetricBlocks {
  Matrix pp;  // d2 phi / dp dp
  Matrix pq;  // d2 phi / dp dq
  Matrix qq;  // d2 phi / dq dq
};

inline MetricBlocks phi_hessian_blocks(const TransportPlan& P, double lambda) {
  const Matrix Gi = ((1.0 + lambda) / lambda) * fisher_info_theta(P);
  const Matrix G = Gi.ldlt().solve(Matrix::Identity(Gi.rows(), Gi.cols()));
  const Eigen::Index ds = P.rows() - 1, dr = P.cols() - 1;
  MetricBlocks b;
  b.pp = G.topLeftCorner(ds, ds);
  b.pq = G.topRightCorner(ds, dr);
  b.qq = G.bottomRightCorner(dr, dr);
  return b;
}

// Canonical divergence between the problems (p,q) and (p2,q2): the KL
// divergence between their optimal plans.  Also computable through the dual
// potentials of the second problem,
//   (1+lambda)/lambda * [psi' + phi(p,q) - alpha'.p - beta'.q],
// which canonical_divergence_dual_route exposes for cross-validation.
inline double canonical_divergence(const CostMatrix& M, const ProbabilityVector& p,
                                   const ProbabilityVector& q, const ProbabilityVector& p2,
                                   const ProbabilityVector& q2, double lambda,
                                   const Tolerance& tol = Tolerance()) {
  const SinkhornResult r1 = sinkhorn_solve(M, p, q, lambda, tol);
  const SinkhornResult r2 = sinkhorn_solve(M, p2, q2, lambda, tol);
  return kl_divergence(r1.plan, r2.plan);
}

inline double canonical_divergence_dual_route(const CostMatrix& M, const ProbabilityVector& p,
                                              const ProbabilityVector& q,
                                              const ProbabilityVector& p2,
                                              const ProbabilityVector& q2, double lambda,
                                              const Tolerance& tol = Tolerance()) {
  const SinkhornResult r1 = sinkhorn_solve(M, p, q, lambda, tol);
  const SinkhornResult r2 = sinkhorn_solve(M, p2, q2, lambda, tol);
  const DualPotentials d2 = potentials_from_scaling(r2.scaling);
  const double phi1 = cuturi_value(M, r1.plan.entries(), lambda);
  return ((1.0 + lambda) / lambda) *
         (d2.psi + phi1 - d2.alpha.dot(p.values()) - d2.beta.dot(q.values()));
}

}  // namespace otgeo
