// Applications of the lambda-divergence: barycenters on the simplex,
// estimator stationarity residuals, and classifier boundary location.
#pragma once

#include "otgeo/core.hpp"
#include "otgeo/divergence.hpp"
#include "otgeo/geometry.hpp"

#include <functional>
#include <vector>

namespace otgeo {

// Both argmin orders are meaningful: D runs from the data points to the
// center, or from the center to the points.
enum class BarycenterDirection { DFromPointsToCenter, DFromCenterToPoints };

struct BarycenterProblem {
  std::vector<ProbabilityVector> points;
  CostMatrix M;
  double lambda = 1.0;
  BarycenterDirection direction = BarycenterDirection::DFromPointsToCenter;
};

struct BarycenterResult {
  ProbabilityVector point;
  double objective = 0.0;
  double residual = 0.0;
  long iterations = 0;
  // One value per accepted Armijo step.  The final gradient-only polish
  // phase (where true objective decreases sit below evaluation noise) does
  // not append here.
  std::vector<double> objective_trace;
};

namespace detail {

// Euclidean projection onto the simplex, with a small interior floor so the
// entropic solves behind the objective stay well posed.
inline Vector project_simplex(Vector y, double floor = 1e-12) {
  const Eigen::Index n = y.size();
  std::vector<double> u(y.data(), y.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, tau = 0.0;
  int rho = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    css += u[k];
    const double t = (css - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) {
      rho = static_cast<int>(k + 1);
      tau = t;
    }
  }
  (void)rho;
  Vector x = (y.array() - tau).cwiseMax(floor);
  return x / x.sum();
}

}  // namespace detail

// Projected gradient with Armijo backtracking; gradients come from the dual
// potentials and the Fisher metric blocks (no finite differences on the
// production path).
inline BarycenterResult lambda_barycenter(const BarycenterProblem& prob,
                                          const Tolerance& tol = Tolerance()) {
  if (prob.points.size() < 2) throw InvalidArgument("lambda_barycenter: need >= 2 points");
  const Eigen::Index n = prob.points.front().size();
  for (const auto& pt : prob.points)
    if (pt.size() != n) throw InvalidArgument("lambda_barycenter: points of mixed dimension");
  if (prob.M.rows() != n || prob.M.cols() != n)
    throw InvalidArgument("lambda_barycenter: cost dimension mismatch");
  const double lambda = prob.lambda;
  if (!(lambda > 0.0)) throw InvalidArgument("lambda_barycenter: lambda must be > 0");
  const double gamma = lambda / (1.0 + lambda);
  const size_t k = prob.points.size();
  // Gradients come from converged duals; their accuracy tracks the marginal
  // residual, so the inner solves run well below the outer tolerance.
  const Tolerance solver_tol(std::min(tol.marginal_tol, 1e-12), std::max(tol.max_iter, 200000L));

  // Reference plans P*(q_i, q_i) are constant along the optimization.
  std::vector<TransportPlan> self_plans;
  if (prob.direction == BarycenterDirection::DFromPointsToCenter) {
    self_plans.reserve(k);
    for (const auto& qi : prob.points)
      self_plans.push_back(sinkhorn_solve(prob.M, qi, qi, lambda, solver_tol).plan);
  }

  auto objective_and_grad = [&](const ProbabilityVector& x, Vector* grad) {
    double f = 0.0;
    if (grad) *grad = Vector::Zero(n);
    if (prob.direction == BarycenterDirection::DFromPointsToCenter) {
      // sum_i D[q_i : x]; the x-gradient is -G_xx(q_i, x) (q_i - x).
      for (size_t i = 0; i < k; ++i) {
        const SinkhornResult r = sinkhorn_solve(prob.M, prob.points[i], x, lambda, solver_tol);
        f += gamma * kl_divergence(self_plans[i], r.plan);
        if (grad) {
          const MetricBlocks mb = phi_hessian_blocks(r.plan, lambda);
          const Vector diff = (prob.points[i].values() - x.values()).head(n - 1);
          grad->head(n - 1) -= mb.qq * diff;
        }
      }
    } else {
      // sum_i D[x : q_i]; differentiate the reference slot through the
      // potentials of (x,x) and (x,q_i) plus the cross metric block.
      const SinkhornResult rxx = sinkhorn_solve(prob.M, x, x, lambda, solver_tol);
      const double cxx = cuturi_value(prob.M, rxx.plan.entries(), lambda);
      const DualPotentials dxx = potentials_from_scaling(rxx.scaling);
      for (size_t i = 0; i < k; ++i) {
        const SinkhornResult r = sinkhorn_solve(prob.M, x, prob.points[i], lambda, solver_tol);
        const double cxq = cuturi_value(prob.M, r.plan.entries(), lambda);
        const DualPotentials d = potentials_from_scaling(r.scaling);
        const Vector pq = x.values() - prob.points[i].values();
        f += cxx - cxq - d.beta.dot(pq);
        if (grad) {
          const MetricBlocks mb = phi_hessian_blocks(r.plan, lambda);
          grad->head(n - 1) += (dxx.alpha + dxx.beta - d.alpha - d.beta).head(n - 1) -
                               mb.pq * pq.head(n - 1);
        }
      }
    }
    return f;
  };

  // Start from the better of the arithmetic and normalized geometric means
  // (the latter is near-optimal in the large-lambda regime).
  Vector x = Vector::Zero(n);
  for (const auto& pt : prob.points) x += pt.values();
  x /= static_cast<double>(k);
  Vector xg = Vector::Zero(n);
  for (const auto& pt : prob.points) xg += pt.values().array().log().matrix();
  xg = (xg / static_cast<double>(k)).array().exp();
  xg /= xg.sum();
  ProbabilityVector xp = ProbabilityVector::interior(x);
  const ProbabilityVector xgp = ProbabilityVector::interior(xg);
  if (objective_and_grad(xgp, nullptr) < objective_and_grad(xp, nullptr)) {
    x = xg;
    xp = xgp;
  }

  BarycenterResult out{xp, 0.0, std::numeric_limits<double>::infinity(), 0, {}};
  Vector grad(n);
  double f = objective_and_grad(xp, &grad);
  out.objective_trace.push_back(f);
  auto residual_at = [&](const Vector& xc, const Vector& g) {
    // Displacement of a unit projected-gradient probe.
    return (xc - detail::project_simplex(xc - g)).cwiseAbs().maxCoeff();
  };
  // Fisher-Rao scaled descent direction, tangent to the simplex.  The
  // divergence objectives carry diag(1/x)-type curvature near the boundary;
  // the scaling keeps the step sizes usable there.
  auto natural_direction = [&](const Vector& xc, const Vector& g) {
    const double gbar = g.dot(xc);
    return (xc.array() * (g.array() - gbar)).matrix().eval();
  };

  // Armijo phase: progresses until true objective decreases fall below the
  // evaluation noise of the solver-backed objective.
  double step = 1.0;
  const long max_outer = 2000;
  for (long it = 1; it <= max_outer; ++it) {
    out.residual = residual_at(x, grad);
    out.iterations = it;
    if (out.residual <= tol.value_tol) {
      out.point = ProbabilityVector::interior(x, /*renormalize=*/true);
      out.objective = f;
      return out;
    }
    const Vector dir = natural_direction(x, grad);
    const double slope = grad.dot(dir);  // = sum x (g - gbar)^2 >= 0
    step = std::min(step * 2.0, 1e3);
    bool accepted = false;
    while (step >= 1e-14) {
      const Vector xn = detail::project_simplex(x - step * dir);
      const ProbabilityVector xpn = ProbabilityVector::interior(xn, /*renormalize=*/true);
      Vector gn(n);
      const double fn = objective_and_grad(xpn, &gn);
      if (fn <= f - 1e-4 * step * slope) {
        x = xn;
        f = fn;
        grad = gn;
        out.objective_trace.push_back(f);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }

  // Polish phase: fixed-step iteration judged on the residual only
  // (gradients come from converged duals and stay accurate where objective
  // differences do not).
  double polish_step = std::clamp(step, 1e-4, 1.0);
  Vector best_x = x;
  double best_res = residual_at(x, grad);
  long stale = 0;
  for (long it = 0; it < 3000 && best_res > tol.value_tol; ++it) {
    x = detail::project_simplex(x - polish_step * natural_direction(x, grad));
    ++out.iterations;
    objective_and_grad(ProbabilityVector::interior(x, /*renormalize=*/true), &grad);
    const double res = residual_at(x, grad);
    if (res < best_res * (1.0 - 1e-4)) {
      if (res < best_res) {
        best_res = res;
        best_x = x;
      }
      stale = 0;
    } else if (++stale >= 150) {
      polish_step *= 0.5;
      x = best_x;
      stale = 0;
      if (polish_step < 1e-9) break;
    }
  }
  x = best_x;
  out.residual = best_res;
  if (out.residual > tol.value_tol) {
    char msg[96];
    std::snprintf(msg, sizeof(msg), "lambda_barycenter: first-order residual %.3e", out.residual);
    throw NonConvergence(msg, out.residual, out.iterations);
  }
  out.point = ProbabilityVector::interior(x, /*renormalize=*/true);
  out.objective = objective_and_grad(out.point, nullptr);
  return out;
}

// Central-difference Hessian of C_lambda(qhat, .) at p in the reduced
// simplex coordinates (p_1..p_{n-1}, last entry compensating).
inline Matrix metric_by_finite_differences(const CostMatrix& M, const ProbabilityVector& qhat,
                                           const ProbabilityVector& p, double lambda,
                                           double h = 1e-3,
                                           const Tolerance& tol = Tolerance(1e-13, 200000)) {
  const Eigen::Index n = p.size();
  auto C = [&](const Vector& full) {
    return cuturi_function(M, qhat, ProbabilityVector::interior(full, /*renormalize=*/true),
                           lambda, tol);
  };
  Matrix G(n - 1, n - 1);
  for (Eigen::Index a = 0; a < n - 1; ++a)
    for (Eigen::Index b = 0; b <= a; ++b) {
      Vector ea = Vector::Zero(n), eb = Vector::Zero(n);
      ea[a] = h;
      ea[n - 1] = -h;
      eb[b] = h;
      eb[n - 1] = -h;
      const double v = (C(p.values() + ea + eb) - C(p.values() + ea - eb) -
                        C(p.values() - ea + eb) + C(p.values() - ea - eb)) /
                       (4.0 * h * h);
      G(a, b) = v;
      G(b, a) = v;
    }
  return G;
}

// Stationarity residual of the D_lambda estimator: J^T G(qhat, p) (p - qhat)
// in reduced coordinates, with G by finite differences.  Vanishes at the
// minimizer of D_lambda[qhat : p(xi)] along the model.
inline Vector estimator_residual(const ProbabilityVector& qhat, const ProbabilityVector& model_point,
                                 const Matrix& model_jacobian, const CostMatrix& M, double lambda) {
  const Eigen::Index n = qhat.size();
  if (model_point.size() != n || model_jacobian.rows() != n)
    throw InvalidArgument("estimator_residual: dimension mismatch");
  const Matrix G = metric_by_finite_differences(M, qhat, model_point, lambda);
  const Vector diff = (model_point.values() - qhat.values()).head(n - 1);
  return model_jacobian.topRows(n - 1).transpose() * (G * diff);
}

// Divergence difference D[p1 : q] - D[p2 : q] (or with q as the reference,
// per `q_is_reference`).
inline double boundary_gap(const CostMatrix& M, const ProbabilityVector& p1,
                           const ProbabilityVector& p2, const ProbabilityVector& q, double lambda,
                           bool q_is_reference = false, const Tolerance& tol = Tolerance()) {
  if (q_is_reference)
    return lambda_divergence(M, q, p1, lambda, ReferenceRule::SourceP,
                             ScalingFactorRule::LambdaOverOnePlusLambda, tol) -
           lambda_divergence(M, q, p2, lambda, ReferenceRule::SourceP,
                             ScalingFactorRule::LambdaOverOnePlusLambda, tol);
  return lambda_divergence(M, p1, q, lambda, ReferenceRule::SourceP,
                           ScalingFactorRule::LambdaOverOnePlusLambda, tol) -
         lambda_divergence(M, p2, q, lambda, ReferenceRule::SourceP,
                           ScalingFactorRule::LambdaOverOnePlusLambda, tol);
}

// Bisection along the segment a -> b for a sign change of the boundary gap;
// refines until |gap| <= gap_tol.  Returns the boundary point, or nullopt if
// both endpoints are on the same side.
inline std::optional<ProbabilityVector> boundary_on_segment(
    const CostMatrix& M, const ProbabilityVector& p1, const ProbabilityVector& p2,
    const ProbabilityVector& a, const ProbabilityVector& b, double lambda,
    bool q_is_reference = false, double gap_tol = 1e-8, const Tolerance& tol = Tolerance()) {
  auto point = [&](double t) {
    return ProbabilityVector::interior((1.0 - t) * a.values() + t * b.values(),
                                       /*renormalize=*/true);
  };
  double lo = 0.0, hi = 1.0;
  double glo = boundary_gap(M, p1, p2, point(lo), lambda, q_is_reference, tol);
  double ghi = boundary_gap(M, p1, p2, point(hi), lambda, q_is_reference, tol);
  if (std::abs(glo) <= gap_tol) return point(lo);
  if (std::abs(ghi) <= gap_tol) return point(hi);
  if (glo * ghi > 0.0) return std::nullopt;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double gm = boundary_gap(M, p1, p2, point(mid), lambda, q_is_reference, tol);
    if (std::abs(gm) <= gap_tol) return point(mid);
    if (gm * glo > 0.0) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
      ghi = gm;
    }
  }
  return point(0.5 * (lo + hi));
}

// Scans the 2-simplex (n = 3) on a barycentric grid and returns refined
// points where D[p1:q] = D[p2:q].  With p1 == p2 every scanned point
// qualifies.
inline std::vector<ProbabilityVector> classifier_boundary_scan(
    const CostMatrix& M, const ProbabilityVector& p1, const ProbabilityVector& p2, double lambda,
    int grid = 20, bool q_is_reference = false, const Tolerance& tol = Tolerance()) {
  if (p1.size() != 3 || p2.size() != 3)
    throw InvalidArgument("classifier_boundary_scan: grid scan requires n = 3");
  auto node = [&](int i, int j) {
    Vector v(3);
    v << static_cast<double>(i) / grid, static_cast<double>(j) / grid,
        static_cast<double>(grid - i - j) / grid;
    return ProbabilityVector::interior(std::move(v));
  };
  std::vector<ProbabilityVector> boundary;
  // Cache one sweep row of gap values, walking right and down-right edges.
  std::vector<std::vector<double>> gap(grid);
  for (int i = 1; i < grid - 1; ++i) {
    gap[i].assign(grid, std::numeric_limits<double>::quiet_NaN());
    for (int j = 1; i + j < grid; ++j)
      gap[i][j] = boundary_gap(M, p1, p2, node(i, j), lambda, q_is_reference, tol);
  }
  const double gap_tol = 1e-8;
  for (int i = 1; i < grid - 1; ++i)
    for (int j = 1; i + j < grid; ++j) {
      const double g0 = gap[i][j];
      if (std::abs(g0) <= gap_tol) {
        boundary.push_back(node(i, j));
        continue;
      }
      auto try_edge = [&](int i2, int j2) {
        if (i2 < 1 || j2 < 1 || i2 + j2 >= grid) return;
        const double g1 = gap[i2][j2];
        if (std::isnan(g1) || std::abs(g1) <= gap_tol) return;
        if (g0 * g1 < 0.0) {
          auto pt = boundary_on_segment(M, p1, p2, node(i, j), node(i2, j2), lambda,
                                        q_is_reference, gap_tol, tol);
          if (pt) boundary.push_back(*pt);
        }
      };
      try_edge(i, j + 1);
      try_edge(i + 1, j);
    }
  return boundary;
}

// Hamming cost over the n = 2^k binary patterns.
inline CostMatrix hamming_cost(int k) {
  if (k < 1 || k > 10) throw InvalidArgument("hamming_cost: k in [1, 10]");
  const Eigen::Index n = Eigen::Index(1) << k;
  Matrix M(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      M(i, j) = static_cast<double>(__builtin_popcountll(static_cast<unsigned long long>(i ^ j)));
  return CostMatrix(std::move(M));
}

// Boltzmann distribution over k binary units: p(x) ~ exp(sum b_i x_i +
// sum_{i<j} w_ij x_i x_j).  Instance generator for the estimator tests;
// no fitting loop is provided.
struct BoltzmannModel {
  int k = 1;
  Vector bias;    // length k
  Matrix weight;  // k x k, upper triangle used

  ProbabilityVector distribution() const {
    const Eigen::Index n = Eigen::Index(1) << k;
    Vector e(n);
    for (Eigen::Index x = 0; x < n; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i)
        if (x >> i & 1) {
          s += bias[i];
          for (int j = i + 1; j < k; ++j)
            if (x >> j & 1) s += weight(i, j);
        }
      e[x] = s;
    }
    const Vector w = (e.array() - e.maxCoeff()).exp();
    return ProbabilityVector::interior(w, /*renormalize=*/true);
  }

  // Columns: d p / d b_i for each unit, then d p / d w_ij for i < j.
  Matrix jacobian() const {
    const ProbabilityVector p = distribution();
    const Eigen::Index n = p.size();
    const int nw = k * (k - 1) / 2;
    Matrix J(n, k + nw);
    for (int i = 0; i < k; ++i) {
      double mean = 0.0;
      for (Eigen::Index x = 0; x < n; ++x)
        if (x >> i & 1) mean += p[x];
      for (Eigen::Index x = 0; x < n; ++x)
        J(x, i) = p[x] * (((x >> i & 1) ? 1.0 : 0.0) - mean);
    }
    int col = k;
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j, ++col) {
        double mean = 0.0;
        for (Eigen::Index x = 0; x < n; ++x)
          if ((x >> i & 1) && (x >> j & 1)) mean += p[x];
        for (Eigen::Index x = 0; x < n; ++x)
          J(x, col) = p[x] * ((((x >> i & 1) && (x >> j & 1)) ? 1.0 : 0.0) - mean);
      }
    return J;
  }
};

}  // namespace otgeo
