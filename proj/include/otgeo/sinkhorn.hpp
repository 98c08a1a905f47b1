// Entropy-relaxed transportation solver: Gibbs kernel, log-stabilized
// alternating e-projections (Sinkhorn), the free and rate-distortion special
// cases, mixed coordinates and the RAS transformation.
#pragma once

#include "otgeo/core.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>

namespace otgeo {

// K_ij = exp(-m_ij / lambda).  log_entries is the primary representation;
// entries may underflow to zero for small lambda and are kept for the
// linear-domain fast path only.
struct GibbsKernel {
  Matrix log_entries;
  Matrix entries;
  double lambda = 0.0;

  Eigen::Index rows() const { return log_entries.rows(); }
  Eigen::Index cols() const { return log_entries.cols(); }
};

inline GibbsKernel gibbs_kernel(const CostMatrix& M, double lambda) {
  if (!(lambda > 0.0)) throw InvalidArgument("gibbs_kernel: lambda must be > 0");
  GibbsKernel k;
  k.lambda = lambda;
  k.log_entries = -M.entries() / lambda;
  k.entries = k.log_entries.array().exp();
  return k;
}

enum class Gauge { SumOne, LastEntryOne };

// Optimal-plan factorization P*_ij = c a_i b_j K_ij.  log_c is the stable
// representation of the normalizer; c = exp(log_c) may overflow for very
// small lambda.
struct ScalingSolution {
  Vector a;
  Vector b;
  double c = 1.0;
  double log_c = 0.0;
  double lambda = 0.0;
  Gauge gauge = Gauge::SumOne;

  Matrix rebuild_plan(const GibbsKernel& kernel) const {
    Matrix P(a.size(), b.size());
    const Vector la = a.array().log();
    const Vector lb = b.array().log();
    for (Eigen::Index i = 0; i < P.rows(); ++i)
      for (Eigen::Index j = 0; j < P.cols(); ++j)
        P(i, j) = std::exp(log_c + la[i] + lb[j] + kernel.log_entries(i, j));
    return P;
  }
};

struct SinkhornResult {
  TransportPlan plan;
  ScalingSolution scaling;
  long iterations = 0;
  double residual = 0.0;  // max of the two L1 marginal errors at exit
};

struct SinkhornOptions {
  Gauge gauge = Gauge::SumOne;
  bool force_log_domain = false;  // linear updates are used when lambda >= 1
  // Called after every full row+column sweep with the current plan; used by
  // the monotone e-projection tests.
  std::function<void(long iter, const Matrix& plan)> observer;
};

namespace detail {

inline double lse(const Vector& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

// log sum_j exp(A_ij + g_j) for every row i.
inline Vector lse_rows_plus(const Matrix& A, const Vector& g) {
  Vector out(A.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < A.cols(); ++j) m = std::max(m, A(i, j) + g[j]);
    double s = 0.0;
    for (Eigen::Index j = 0; j < A.cols(); ++j) s += std::exp(A(i, j) + g[j] - m);
    out[i] = m + std::log(s);
  }
  return out;
}

inline Vector lse_cols_plus(const Matrix& A, const Vector& f) {
  Vector out(A.cols());
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < A.rows(); ++i) m = std::max(m, A(i, j) + f[i]);
    double s = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i) s += std::exp(A(i, j) + f[i] - m);
    out[j] = m + std::log(s);
  }
  return out;
}

inline Matrix plan_from_logs(const Matrix& logK, const Vector& f, const Vector& g) {
  Matrix P(logK.rows(), logK.cols());
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j) P(i, j) = std::exp(f[i] + g[j] + logK(i, j));
  return P;
}

// Converts converged log scalings (f = log a, g = log b, relative to c = 1)
// to the requested gauge, recomputing log_c so the reconstruction sums to
// one exactly.
inline ScalingSolution gauge_scaling(const Matrix& logK, Vector f, Vector g, double lambda,
                                     Gauge gauge) {
  if (gauge == Gauge::SumOne) {
    const double lf = lse(f), lg = lse(g);
    f.array() -= lf;
    g.array() -= lg;
  } else {
    const double fs = f[f.size() - 1], gs = g[g.size() - 1];
    f.array() -= fs;
    g.array() -= gs;
  }
  // log_c = -log sum_ij a_i b_j K_ij
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logK.rows(); ++i)
    for (Eigen::Index j = 0; j < logK.cols(); ++j)
      m = std::max(m, f[i] + g[j] + logK(i, j));
  double s = 0.0;
  for (Eigen::Index i = 0; i < logK.rows(); ++i)
    for (Eigen::Index j = 0; j < logK.cols(); ++j)
      s += std::exp(f[i] + g[j] + logK(i, j) - m);
  ScalingSolution sol;
  sol.a = f.array().exp();
  sol.b = g.array().exp();
  sol.log_c = -(m + std::log(s));
  sol.c = std::exp(sol.log_c);
  sol.lambda = lambda;
  sol.gauge = gauge;
  return sol;
}

}  // namespace detail

// Converts a ScalingSolution between gauges without changing the plan.
inline ScalingSolution to_gauge(const ScalingSolution& s, Gauge gauge) {
  if (s.gauge == gauge) return s;
  ScalingSolution out = s;
  double fa, fb;  // divide a by fa, b by fb, multiply c by fa*fb
  if (gauge == Gauge::SumOne) {
    fa = s.a.sum();
    fb = s.b.sum();
  } else {
    fa = s.a[s.a.size() - 1];
    fb = s.b[s.b.size() - 1];
  }
  out.a = s.a / fa;
  out.b = s.b / fb;
  out.log_c = s.log_c + std::log(fa) + std::log(fb);
  out.c = std::exp(out.log_c);
  out.gauge = gauge;
  return out;
}

// Solves min <M,P> - lambda H(P) over U(p, q) by alternating e-projections
// starting from the normalized free plan cK.  Marginals of the returned plan
// satisfy max(L1 row error, L1 column error) <= tol.marginal_tol.
inline SinkhornResult sinkhorn_solve(const CostMatrix& M, const ProbabilityVector& p,
                                     const ProbabilityVector& q, double lambda,
                                     const Tolerance& tol = Tolerance(),
                                     const SinkhornOptions& opts = SinkhornOptions()) {
  if (!(lambda > 0.0))
    throw InvalidArgument("sinkhorn_solve: lambda must be > 0 (lambda = 0 is the exact LP)");
  if (p.size() != M.rows() || q.size() != M.cols())
    throw InvalidArgument("sinkhorn_solve: marginal/cost dimension mismatch");

  // Zero-mass rows/columns carry no transport; drop them and reinsert zero
  // rows/columns afterwards.
  std::vector<Eigen::Index> ri, cj;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) ri.push_back(i);
  for (Eigen::Index j = 0; j < q.size(); ++j)
    if (q[j] > 0.0) cj.push_back(j);
  const bool dense = ri.size() == static_cast<size_t>(p.size()) &&
                     cj.size() == static_cast<size_t>(q.size());

  Matrix Msub(ri.size(), cj.size());
  Vector ps(ri.size()), qs(cj.size());
  for (size_t i = 0; i < ri.size(); ++i) ps[i] = p[ri[i]];
  for (size_t j = 0; j < cj.size(); ++j) qs[j] = q[cj[j]];
  for (size_t i = 0; i < ri.size(); ++i)
    for (size_t j = 0; j < cj.size(); ++j) Msub(i, j) = M(ri[i], cj[j]);

  const Matrix logK = -Msub / lambda;
  const Vector logp = ps.array().log();
  const Vector logq = qs.array().log();

  // Start from the normalized free plan: f = g = -0.5 log sum K.
  double lsum;
  {
    double m = logK.maxCoeff();
    double s = 0.0;
    for (Eigen::Index i = 0; i < logK.rows(); ++i)
      for (Eigen::Index j = 0; j < logK.cols(); ++j) s += std::exp(logK(i, j) - m);
    lsum = m + std::log(s);
  }
  Vector f = Vector::Constant(logK.rows(), -0.5 * lsum);
  Vector g = Vector::Constant(logK.cols(), -0.5 * lsum);

  const bool linear = !opts.force_log_domain && lambda >= 1.0;
  Matrix K;  // linear path only
  if (linear) K = logK.array().exp();

  // Newton polish on the dual logs, used when the alternating sweeps enter a
  // slow linear tail (small lambda makes the contraction rate 1 - O(e^{-m/lambda})).
  // The Hessian of the dual is assembled from the current plan's marginals.
  auto newton_polish = [&](Vector& fv, Vector& gv, double& residual) {
    const Eigen::Index s = logK.rows(), r = logK.cols();
    const Eigen::Index dim = s + r - 1;  // gauge: last g fixed
    for (int step = 0; step < 50; ++step) {
      const Matrix P = detail::plan_from_logs(logK, fv, gv);
      const Vector rs = P.rowwise().sum(), cs = P.colwise().sum().transpose();
      residual = std::max((rs - ps).cwiseAbs().sum(), (cs - qs).cwiseAbs().sum());
      if (residual <= tol.marginal_tol) return true;
      Vector grad(dim);
      grad.head(s) = rs - ps;
      grad.tail(r - 1) = (cs - qs).head(r - 1);
      Matrix H = Matrix::Zero(dim, dim);
      H.topLeftCorner(s, s).diagonal() = rs;
      H.bottomRightCorner(r - 1, r - 1).diagonal() = cs.head(r - 1);
      H.topRightCorner(s, r - 1) = P.leftCols(r - 1);
      H.bottomLeftCorner(r - 1, s) = P.leftCols(r - 1).transpose();
      const Vector delta = H.ldlt().solve(grad);
      if (!delta.allFinite()) return false;
      double t = 1.0;
      while (t >= 1e-4) {
        Vector fn = fv - t * delta.head(s);
        Vector gn = gv;
        gn.head(r - 1) -= t * delta.tail(r - 1);
        const Matrix Pn = detail::plan_from_logs(logK, fn, gn);
        const double rn = std::max((Pn.rowwise().sum() - ps).cwiseAbs().sum(),
                                   (Pn.colwise().sum().transpose() - qs).cwiseAbs().sum());
        if (rn < residual) {
          fv = fn;
          gv = gn;
          residual = rn;
          break;
        }
        t *= 0.5;
      }
      if (t < 1e-4) return false;  // no progress; give the sweeps another go
      if (residual <= tol.marginal_tol) return true;
    }
    return false;
  };

  double residual = std::numeric_limits<double>::infinity();
  double stall_reference = residual;
  long it = 0;
  bool converged = false;
  for (it = 1; it <= tol.max_iter; ++it) {
    if (linear) {
      Vector a = f.array().exp(), b = g.array().exp();
      a = ps.array() / (K * b).array();
      b = qs.array() / (K.transpose() * a).array();
      f = a.array().log();
      g = b.array().log();
    } else {
      f = logp - detail::lse_rows_plus(logK, g);
      g = logq - detail::lse_cols_plus(logK, f);
    }
    const Matrix P = detail::plan_from_logs(logK, f, g);
    residual = std::max((P.rowwise().sum() - ps).cwiseAbs().sum(),
                        (P.colwise().sum().transpose() - qs).cwiseAbs().sum());
    if (opts.observer) opts.observer(it, P);
    if (residual <= tol.marginal_tol) {
      converged = true;
      break;
    }
    if (it % 200 == 0) {
      if (residual > 0.25 * stall_reference && newton_polish(f, g, residual)) {
        converged = true;
        ++it;
        break;
      }
      stall_reference = residual;
    }
  }
  if (!converged)
    throw NonConvergence("sinkhorn_solve: marginal residual " + std::to_string(residual) +
                             " after " + std::to_string(tol.max_iter) + " iterations",
                         residual, tol.max_iter);

  ScalingSolution sub = detail::gauge_scaling(logK, f, g, lambda, opts.gauge);
  Matrix Pfull;
  ScalingSolution sol;
  if (dense) {
    GibbsKernel ksub;
    ksub.log_entries = logK;
    ksub.lambda = lambda;
    Pfull = sub.rebuild_plan(ksub);
    sol = std::move(sub);
  } else {
    // Reinsert dropped rows/columns as zeros; scaling vectors get zeros too
    // so the factorization c a_i b_j K_ij still reproduces the plan.
    Pfull = Matrix::Zero(p.size(), q.size());
    sol.a = Vector::Zero(p.size());
    sol.b = Vector::Zero(q.size());
    GibbsKernel ksub;
    ksub.log_entries = logK;
    ksub.lambda = lambda;
    const Matrix Psub = sub.rebuild_plan(ksub);
    for (size_t i = 0; i < ri.size(); ++i)
      for (size_t j = 0; j < cj.size(); ++j) Pfull(ri[i], cj[j]) = Psub(i, j);
    for (size_t i = 0; i < ri.size(); ++i) sol.a[ri[i]] = sub.a[i];
    for (size_t j = 0; j < cj.size(); ++j) sol.b[cj[j]] = sub.b[j];
    sol.c = sub.c;
    sol.log_c = sub.log_c;
    sol.lambda = lambda;
    sol.gauge = sub.gauge;
  }
  return SinkhornResult{TransportPlan(Pfull, /*renormalize=*/true), std::move(sol), it, residual};
}

// e-projection of P onto M(p, .): rescale rows by a_i = p_i / sum_j P_ij.
inline TransportPlan e_project_rows(const TransportPlan& P, const ProbabilityVector& p) {
  if (P.rows() != p.size()) throw InvalidArgument("e_project_rows: dimension mismatch");
  const Vector rs = P.row_sums();
  Matrix out = P.entries();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (rs[i] <= 0.0) {
      if (p[i] > 0.0) throw InvalidArgument("e_project_rows: zero row sum with positive target");
      continue;
    }
    out.row(i) *= p[i] / rs[i];
  }
  return TransportPlan(std::move(out));
}

// e-projection of P onto M(., q): rescale columns by b_j = q_j / sum_i P_ij.
inline TransportPlan e_project_cols(const TransportPlan& P, const ProbabilityVector& q) {
  if (P.cols() != q.size()) throw InvalidArgument("e_project_cols: dimension mismatch");
  const Vector cs = P.col_sums();
  Matrix out = P.entries();
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    if (cs[j] <= 0.0) {
      if (q[j] > 0.0) throw InvalidArgument("e_project_cols: zero column sum with positive target");
      continue;
    }
    out.col(j) *= q[j] / cs[j];
  }
  return TransportPlan(std::move(out));
}

// Optimal plan of the free problem (no marginal constraints): cK.
inline TransportPlan free_optimal_plan(const CostMatrix& M, double lambda) {
  if (!(lambda > 0.0)) throw InvalidArgument("free_optimal_plan: lambda must be > 0");
  const Matrix logK = -M.entries() / lambda;
  const double m = logK.maxCoeff();
  Matrix P = (logK.array() - m).exp();
  return TransportPlan(std::move(P), /*renormalize=*/true);
}

// Optimal plan of the rate-distortion problem (sender constraint only):
// P_ij = p_i K_ij / sum_j K_ij, the e-projection of cK onto M(p, .).
inline TransportPlan rate_distortion_plan(const CostMatrix& M, const ProbabilityVector& p,
                                          double lambda) {
  if (!(lambda > 0.0)) throw InvalidArgument("rate_distortion_plan: lambda must be > 0");
  if (p.size() != M.rows()) throw InvalidArgument("rate_distortion_plan: dimension mismatch");
  const Matrix logK = -M.entries() / lambda;
  Matrix P(M.rows(), M.cols());
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    const Vector row = logK.row(i).transpose();
    const double l = detail::lse(row);
    for (Eigen::Index j = 0; j < M.cols(); ++j) P(i, j) = p[i] * std::exp(logK(i, j) - l);
  }
  return TransportPlan(std::move(P), /*renormalize=*/true);
}

// KL between two optimal plans of the same Gibbs kernel, evaluated from the
// scaling logs: the kernel cancels in the log ratio, so
//   KL[P1:P2] = (log c1 - log c2) + sum_i p_i log(a1_i/a2_i)
//                                 + sum_j q_j log(b1_j/b2_j)
// with (p, q) the first plan's marginals.  Stable even when kernel entries
// underflow (large grids, small lambda), where the entrywise KL cannot be
// formed.
inline double kl_optimal_plans(const ScalingSolution& s1, const ScalingSolution& s2,
                               const Vector& p1, const Vector& q1) {
  if (s1.a.size() != s2.a.size() || s1.b.size() != s2.b.size())
    throw InvalidArgument("kl_optimal_plans: dimension mismatch");
  double d = s1.log_c - s2.log_c;
  for (Eigen::Index i = 0; i < p1.size(); ++i) {
    if (p1[i] <= 0.0) continue;
    if (s2.a[i] <= 0.0) throw SupportViolation("kl_optimal_plans: second plan drops row");
    d += p1[i] * (std::log(s1.a[i]) - std::log(s2.a[i]));
  }
  for (Eigen::Index j = 0; j < q1.size(); ++j) {
    if (q1[j] <= 0.0) continue;
    if (s2.b[j] <= 0.0) throw SupportViolation("kl_optimal_plans: second plan drops column");
    d += q1[j] * (std::log(s1.b[j]) - std::log(s2.b[j]));
  }
  return d;
}

inline double kl_optimal_plans(const SinkhornResult& r1, const SinkhornResult& r2) {
  return kl_optimal_plans(r1.scaling, r2.scaling, r1.plan.row_sums(), r1.plan.col_sums());
}

// Marginals plus the interaction part Theta of the mixed coordinate system;
// Theta vanishes exactly on product plans.
struct MixedCoordinates {
  ProbabilityVector p;
  ProbabilityVector q;
  Matrix theta;  // (n-1) x (n-1), Theta_ij = log(P_ij P_nn / (P_in P_nj))
};

inline MixedCoordinates mixed_coordinates(const TransportPlan& P) {
  if (P.rows() != P.cols()) throw InvalidArgument("mixed_coordinates: plan must be square");
  const Eigen::Index n = P.rows();
  const Matrix& m = P.entries();
  if (m.minCoeff() <= 0.0)
    throw InvalidArgument("mixed_coordinates: plan must be strictly positive");
  Matrix theta(n - 1, n - 1);
  const double lnn = std::log(m(n - 1, n - 1));
  for (Eigen::Index i = 0; i < n - 1; ++i)
    for (Eigen::Index j = 0; j < n - 1; ++j)
      theta(i, j) = std::log(m(i, j)) + lnn - std::log(m(i, n - 1)) - std::log(m(n - 1, j));
  auto [p, q] = marginals(P);
  return MixedCoordinates{std::move(p), std::move(q), std::move(theta)};
}

// RAS transformation T_ab P = (c a_i b_j P_ij), normalized; preserves Theta.
inline TransportPlan ras_transform(const TransportPlan& P, const Vector& a, const Vector& b) {
  if (a.size() != P.rows() || b.size() != P.cols())
    throw InvalidArgument("ras_transform: scaling dimension mismatch");
  if (a.minCoeff() <= 0.0 || b.minCoeff() <= 0.0)
    throw InvalidArgument("ras_transform: scalings must be strictly positive");
  Matrix out = a.asDiagonal() * P.entries() * b.asDiagonal();
  return TransportPlan(std::move(out), /*renormalize=*/true);
}

}  // namespace otgeo
