// Exact (lambda = 0) Wasserstein solvers and brute-force references.  The
// transportation simplex here certifies the entropic solvers; the projected
// gradient minimizer is kept deliberately independent of the Sinkhorn path.
#pragma once

#include "otgeo/core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <optional>
#include <random>
#include <vector>

namespace otgeo {

struct ExactSolution {
  TransportPlan plan;
  double cost = 0.0;
  bool unique = true;
  // Dual potentials of the LP, for complementary-slackness certification.
  Vector u;
  Vector v;
};

namespace detail {

// Transportation simplex with northwest-corner start and Bland's pivoting
// rule (smallest-index entering arc, smallest-index leaving arc among the
// minimum-ratio candidates), which is deterministic and cycle-free.
class TransportSimplex {
 public:
  TransportSimplex(const Matrix& M, const Vector& p, const Vector& q)
      : M_(M), p_(p), q_(q), s_(M.rows()), r_(M.cols()) {}

  void solve() {
    northwest_start();
    const long max_pivots = 50L * static_cast<long>(s_ * r_) + 1000;
    for (long k = 0; k < max_pivots; ++k) {
      compute_duals();
      Eigen::Index ei = -1, ej = -1;
      if (!find_entering(ei, ej)) return;  // optimal
      pivot(ei, ej);
    }
    throw NonConvergence("transportation simplex exceeded pivot budget", 0.0, 0);
  }

  Matrix plan() const {
    Matrix P = Matrix::Zero(s_, r_);
    for (const auto& [i, j] : basis_) P(i, j) = x_[cell(i, j)];
    return P;
  }
  const Vector& duals_u() const { return u_; }
  const Vector& duals_v() const { return v_; }

  // A second optimal basis exists iff some nonbasic arc has zero reduced
  // cost on the optimal face.
  bool unique_optimum(double tol = 1e-9) const {
    for (Eigen::Index i = 0; i < s_; ++i)
      for (Eigen::Index j = 0; j < r_; ++j)
        if (!in_basis_[cell(i, j)] && M_(i, j) - u_[i] - v_[j] <= tol) return false;
    return true;
  }

 private:
  Eigen::Index cell(Eigen::Index i, Eigen::Index j) const { return i * r_ + j; }

  void northwest_start() {
    x_.assign(s_ * r_, 0.0);
    in_basis_.assign(s_ * r_, false);
    basis_.clear();
    Vector a = p_, b = q_;
    Eigen::Index i = 0, j = 0;
    while (basis_.size() < static_cast<size_t>(s_ + r_ - 1)) {
      const double t = std::min(a[i], b[j]);
      x_[cell(i, j)] = t;
      in_basis_[cell(i, j)] = true;
      basis_.push_back({i, j});
      a[i] -= t;
      b[j] -= t;
      if (i == s_ - 1 && j == r_ - 1) break;
      if (a[i] <= b[j] && i < s_ - 1)
        ++i;
      else
        ++j;
    }
  }

  void compute_duals() {
    u_ = Vector::Constant(s_, std::numeric_limits<double>::quiet_NaN());
    v_ = Vector::Constant(r_, std::numeric_limits<double>::quiet_NaN());
    u_[0] = 0.0;
    // Propagate u_i + v_j = m_ij over the basis tree.
    bool progress = true;
    while (progress) {
      progress = false;
      for (const auto& [i, j] : basis_) {
        const bool ku = !std::isnan(u_[i]), kv = !std::isnan(v_[j]);
        if (ku && !kv) {
          v_[j] = M_(i, j) - u_[i];
          progress = true;
        } else if (!ku && kv) {
          u_[i] = M_(i, j) - v_[j];
          progress = true;
        }
      }
    }
  }

  bool find_entering(Eigen::Index& ei, Eigen::Index& ej) const {
    for (Eigen::Index i = 0; i < s_; ++i)
      for (Eigen::Index j = 0; j < r_; ++j)
        if (!in_basis_[cell(i, j)] && M_(i, j) - u_[i] - v_[j] < -1e-11) {
          ei = i;
          ej = j;
          return true;  // Bland: first (smallest) index
        }
    return false;
  }

  // The basis tree plus the entering arc contains one cycle; walk it with
  // alternating signs and shift the minimum-ratio amount around it.
  void pivot(Eigen::Index ei, Eigen::Index ej) {
    // Path from row node ei to column node ej through basic arcs.
    const Eigen::Index nn = s_ + r_;  // rows 0..s-1, cols s..s+r-1
    std::vector<std::vector<std::pair<Eigen::Index, Eigen::Index>>> adj(nn);
    for (size_t k = 0; k < basis_.size(); ++k) {
      const auto [i, j] = basis_[k];
      adj[i].push_back({s_ + j, static_cast<Eigen::Index>(k)});
      adj[s_ + j].push_back({i, static_cast<Eigen::Index>(k)});
    }
    std::vector<Eigen::Index> prev_node(nn, -1), prev_arc(nn, -1);
    std::vector<bool> seen(nn, false);
    std::vector<Eigen::Index> stack{ei};
    seen[ei] = true;
    while (!stack.empty()) {
      const Eigen::Index u = stack.back();
      stack.pop_back();
      if (u == s_ + ej) break;
      for (const auto& [w, arc] : adj[u])
        if (!seen[w]) {
          seen[w] = true;
          prev_node[w] = u;
          prev_arc[w] = arc;
          stack.push_back(w);
        }
    }
    // Cycle cells: entering (+), then the tree path alternates - + - ...
    std::vector<Eigen::Index> path_arcs;
    for (Eigen::Index w = s_ + ej; w != ei; w = prev_node[w]) path_arcs.push_back(prev_arc[w]);
    std::reverse(path_arcs.begin(), path_arcs.end());

    double theta = std::numeric_limits<double>::infinity();
    Eigen::Index leave = -1;  // index into basis_
    for (size_t t = 0; t < path_arcs.size(); ++t) {
      if (t % 2 == 0) {  // minus position
        const auto [i, j] = basis_[path_arcs[t]];
        const double val = x_[cell(i, j)];
        if (val < theta - 1e-15 ||
            (val < theta + 1e-15 && (leave < 0 || cell(i, j) < cell(basis_[leave].first,
                                                                    basis_[leave].second)))) {
          theta = std::min(theta, val);
          leave = path_arcs[t];
        }
      }
    }
    x_[cell(ei, ej)] = theta;
    for (size_t t = 0; t < path_arcs.size(); ++t) {
      const auto [i, j] = basis_[path_arcs[t]];
      x_[cell(i, j)] += (t % 2 == 0 ? -theta : theta);
    }
    const auto [li, lj] = basis_[leave];
    in_basis_[cell(li, lj)] = false;
    x_[cell(li, lj)] = 0.0;
    basis_[leave] = {ei, ej};
    in_basis_[cell(ei, ej)] = true;
  }

  const Matrix& M_;
  const Vector& p_;
  const Vector& q_;
  Eigen::Index s_, r_;
  std::vector<double> x_;
  std::vector<bool> in_basis_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> basis_;
  Vector u_, v_;
};

}  // namespace detail

// C_W(p, q) = min <M, P> over U(p, q), solved exactly.
inline ExactSolution exact_wasserstein(const CostMatrix& M, const ProbabilityVector& p,
                                       const ProbabilityVector& q) {
  if (p.size() != M.rows() || q.size() != M.cols())
    throw InvalidArgument("exact_wasserstein: dimension mismatch");
  if (M.rows() > 64 || M.cols() > 64)
    throw InvalidArgument("exact_wasserstein: desk-scale solver, dims <= 64");
  detail::TransportSimplex ts(M.entries(), p.values(), q.values());
  ts.solve();
  Matrix P = ts.plan();
  // Clamp pivot dust so the plan validates.
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j)
      if (P(i, j) < 0.0 && P(i, j) > -1e-12) P(i, j) = 0.0;
  ExactSolution sol{TransportPlan(P, /*renormalize=*/true),
                    (M.entries().array() * P.array()).sum(), ts.unique_optimum(), ts.duals_u(),
                    ts.duals_v()};
  return sol;
}

// The lambda -> 0 plan pair for zero-diagonal, positive off-diagonal costs:
// P*_0(p,p) = diag(p) and an LP-optimal P*_0(p,q), whose diagonal equals
// min(p_i, q_i) whenever the cost satisfies a strict triangle inequality.
// The default cost is the unit discrete metric (m_ij = 1, i != j).
inline std::pair<TransportPlan, TransportPlan> exact_lambda0_plans(
    const ProbabilityVector& p, const ProbabilityVector& q,
    const std::optional<CostMatrix>& cost = std::nullopt) {
  if (p.size() != q.size()) throw InvalidArgument("exact_lambda0_plans: dimension mismatch");
  const Eigen::Index n = p.size();
  Matrix M;
  if (cost) {
    M = cost->entries();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (M(i, i) != 0.0) throw InvalidArgument("exact_lambda0_plans: diagonal cost must be 0");
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j && M(i, j) <= 0.0)
          throw InvalidArgument("exact_lambda0_plans: off-diagonal costs must be > 0");
    }
  } else {
    M = Matrix::Ones(n, n);
    M.diagonal().setZero();
  }
  Matrix diag = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) diag(i, i) = p[i];
  ExactSolution lp = exact_wasserstein(CostMatrix(M), p, q);
  return {TransportPlan(std::move(diag), /*renormalize=*/true), std::move(lp.plan)};
}

namespace detail {

// Euclidean projection onto the affine hull {X 1 = p, X^T 1 = q}.
inline void project_affine(Matrix& X, const Vector& p, const Vector& q) {
  const double s = static_cast<double>(X.rows()), r = static_cast<double>(X.cols());
  const Vector dr = p - X.rowwise().sum();
  const Vector dc = q - X.colwise().sum().transpose();
  const double sigma = dr.sum();
  const Vector u = dr / r;
  const Vector v = (dc.array() - sigma / r).matrix() / s;
  X += u * Vector::Ones(X.cols()).transpose() + Vector::Ones(X.rows()) * v.transpose();
}

// Dykstra projection onto U(p, q) = affine hull intersected with the
// nonnegative orthant.
inline Matrix project_polytope(Matrix X, const Vector& p, const Vector& q, int iters = 5000) {
  Matrix Y = Matrix::Zero(X.rows(), X.cols());
  double overshoot = 0.0;
  for (int k = 0; k < iters; ++k) {
    project_affine(X, p, q);
    overshoot = -std::min(X.minCoeff(), 0.0);
    const Matrix B = X + Y;
    Matrix Xn = B.cwiseMax(0.0);
    Y = B - Xn;
    const double delta = (Xn - X).cwiseAbs().maxCoeff();
    X = std::move(Xn);
    if (delta < 1e-16 && overshoot < 1e-13) break;
  }
  project_affine(X, p, q);
  return X.cwiseMax(0.0);
}

inline double relaxed_objective(const Matrix& M, const Matrix& P, double lambda) {
  return (M.array() * P.array()).sum() - lambda * entropy(P);
}

}  // namespace detail

// Brute-force minimizer of F_lambda(P) = <M,P> - lambda H(P) over U(p, q),
// multi-start with a fixed seed.  The inner loop is a primal feasible Newton
// iteration on the flow variables (equality-constrained step with
// fraction-to-boundary damping); the optimum is strictly interior for
// lambda > 0, so no active set is needed.  Independent of the dual-scaling
// solver it validates; intended as a correctness reference for dims <= 4x4.
inline TransportPlan brute_force_entropy_relaxed(const CostMatrix& M, const ProbabilityVector& p,
                                                 const ProbabilityVector& q, double lambda,
                                                 int starts = 20, unsigned seed = 20240917) {
  if (!(lambda > 0.0)) throw InvalidArgument("brute_force_entropy_relaxed: lambda must be > 0");
  if (M.rows() > 4 || M.cols() > 4)
    throw InvalidArgument("brute_force_entropy_relaxed: reference solver, dims <= 4");
  const Eigen::Index s = M.rows(), r = M.cols();
  const Eigen::Index nv = s * r;
  const Eigen::Index nc = s + r - 1;  // marginal constraints, last column dropped
  std::mt19937_64 rng(seed);
  auto uniform = [&rng]() { return (rng() >> 11) * 0x1.0p-53; };

  // Constraint matrix rows: row sums, then column sums 0..r-2.
  Matrix A = Matrix::Zero(nc, nv);
  Vector bvec(nc);
  for (Eigen::Index i = 0; i < s; ++i) {
    for (Eigen::Index j = 0; j < r; ++j) A(i, i * r + j) = 1.0;
    bvec[i] = p[i];
  }
  for (Eigen::Index j = 0; j + 1 < r; ++j) {
    for (Eigen::Index i = 0; i < s; ++i) A(s + j, i * r + j) = 1.0;
    bvec[s + j] = q[j];
  }

  const Vector mvec = M.entries().reshaped<Eigen::RowMajor>();
  auto objective = [&](const Vector& x) {
    double f = 0.0;
    for (Eigen::Index k = 0; k < nv; ++k) {
      f += mvec[k] * x[k];
      if (x[k] > 0.0) f += lambda * x[k] * std::log(x[k]);
    }
    return f;
  };

  Vector best;
  double best_f = std::numeric_limits<double>::infinity();
  const Vector prod = (p.values() * q.values().transpose()).reshaped<Eigen::RowMajor>();
  for (int start = 0; start < starts; ++start) {
    Vector x;
    if (start == 0) {
      x = prod;
    } else {
      Matrix W(s, r);
      for (Eigen::Index i = 0; i < s; ++i)
        for (Eigen::Index j = 0; j < r; ++j) W(i, j) = -std::log(1.0 - uniform());
      const Matrix proj = detail::project_polytope(W / W.sum(), p.values(), q.values());
      // Mix toward the product plan for strict interiority.
      x = 0.9 * proj.reshaped<Eigen::RowMajor>() + 0.1 * prod;
    }
    double f = objective(x);
    for (int it = 0; it < 200; ++it) {
      Vector g(nv), hinv(nv);
      for (Eigen::Index k = 0; k < nv; ++k) {
        g[k] = mvec[k] + lambda * (std::log(x[k]) + 1.0);
        hinv[k] = x[k] / lambda;
      }
      const Vector rfeas = bvec - A * x;
      const Matrix S = A * hinv.asDiagonal() * A.transpose();
      const Vector nu = S.ldlt().solve(-(A * (hinv.asDiagonal() * g)) - rfeas);
      const Vector d = -(hinv.array() * (g + A.transpose() * nu).array()).matrix();
      if (!d.allFinite()) break;

      double alpha = 1.0;
      for (Eigen::Index k = 0; k < nv; ++k)
        if (d[k] < 0.0) alpha = std::min(alpha, -0.995 * x[k] / d[k]);
      const double slope = g.dot(d);
      bool moved = false;
      while (alpha > 1e-14) {
        const Vector xn = x + alpha * d;
        const double fn = objective(xn);
        if (fn <= f + 1e-4 * alpha * slope) {
          x = xn;
          f = fn;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) break;
      if (std::abs(slope) * alpha <= 1e-15 * (1.0 + std::abs(f)) &&
          rfeas.cwiseAbs().maxCoeff() <= 1e-13)
        break;
    }
    if (f < best_f) {
      best_f = f;
      best = x;
    }
  }
  Matrix P(s, r);
  for (Eigen::Index i = 0; i < s; ++i)
    for (Eigen::Index j = 0; j < r; ++j) P(i, j) = best[i * r + j];
  return TransportPlan(std::move(P), /*renormalize=*/true);
}

}  // namespace otgeo
