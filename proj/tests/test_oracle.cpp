#include "otgeo/oracle.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "otgeo/geometry.hpp"
#include "otgeo/sinkhorn.hpp"
#include "test_support.hpp"

using namespace otgeo;
using otgeo_test::Rng;
using otgeo_test::random_cost;
using otgeo_test::random_simplex;
using otgeo_test::strict_metric_cost;

namespace {

ProbabilityVector bernoulli(double p) {
  Vector v(2);
  v << p, 1.0 - p;
  return ProbabilityVector::interior(std::move(v));
}

CostMatrix example1_cost() {
  Matrix m(2, 2);
  m << 0.0, 1.0, 1.0, 0.0;
  return CostMatrix(std::move(m));
}

// Exhaustive vertex enumeration of U(p, q): every basis (spanning tree) of
// the bipartite graph induces at most one vertex; take the min cost over the
// feasible ones.  Exponential, fine for 3x3.
double min_cost_by_vertex_enumeration(const Matrix& M, const Vector& p, const Vector& q) {
  const Eigen::Index s = p.size(), r = q.size();
  const Eigen::Index nv = s * r;
  const Eigen::Index nb = s + r - 1;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> pick(nb);
  std::function<void(Eigen::Index, Eigen::Index)> rec = [&](Eigen::Index start, Eigen::Index k) {
    if (k == nb) {
      // Solve the equality system restricted to the picked cells.
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(s + r, nb);
      for (Eigen::Index t = 0; t < nb; ++t) {
        A(pick[t] / r, t) = 1.0;
        A(s + pick[t] % r, t) = 1.0;
      }
      Eigen::VectorXd rhs(s + r);
      rhs << p, q;
      const Eigen::VectorXd x = A.colPivHouseholderQr().solve(rhs);
      if ((A * x - rhs).cwiseAbs().maxCoeff() > 1e-9) return;  // singular basis
      if (x.minCoeff() < -1e-10) return;                       // infeasible vertex
      double cost = 0.0;
      for (Eigen::Index t = 0; t < nb; ++t) cost += M(pick[t] / r, pick[t] % r) * std::max(x[t], 0.0);
      best = std::min(best, cost);
      return;
    }
    for (Eigen::Index v = start; v < nv - (nb - k - 1); ++v) {
      pick[k] = static_cast<int>(v);
      rec(v + 1, k + 1);
    }
  };
  rec(0, 0);
  return best;
}

}  // namespace

TEST_CASE("exact wasserstein on the n = 2 family: C_0 = |p - q|") {
  Rng rng(81);
  for (int t = 0; t < 50; ++t) {
    const double p = rng.uniform(0.02, 0.98);
    const double q = rng.uniform(0.02, 0.98);
    const ExactSolution sol = exact_wasserstein(example1_cost(), bernoulli(p), bernoulli(q));
    REQUIRE(sol.cost == Catch::Approx(std::abs(p - q)).margin(1e-14));
  }
}

TEST_CASE("p = q with zero diagonal: zero cost, diagonal plan") {
  Rng rng(83);
  const auto p = random_simplex(rng, 4);
  const CostMatrix M = strict_metric_cost(rng, 4);
  const ExactSolution sol = exact_wasserstein(M, p, p);
  CHECK(sol.cost == Catch::Approx(0.0).margin(1e-14));
  for (Eigen::Index i = 0; i < 4; ++i)
    CHECK(sol.plan(i, i) == Catch::Approx(p[i]).margin(1e-12));
}

TEST_CASE("exact wasserstein matches vertex enumeration on random 3x3") {
  Rng rng(87);
  for (int t = 0; t < 25; ++t) {
    const auto p = random_simplex(rng, 3);
    const auto q = random_simplex(rng, 3);
    const CostMatrix M = random_cost(rng, 3, 3, /*zero_diag=*/false);
    const ExactSolution sol = exact_wasserstein(M, p, q);
    const double brute = min_cost_by_vertex_enumeration(M.entries(), p.values(), q.values());
    REQUIRE(sol.cost == Catch::Approx(brute).margin(1e-10));
  }
}

TEST_CASE("complementary slackness certifies LP optimality") {
  Rng rng(89);
  for (int t = 0; t < 25; ++t) {
    const auto n = static_cast<Eigen::Index>(rng.integer(2, 6));
    const auto m = static_cast<Eigen::Index>(rng.integer(2, 6));
    const auto p = random_simplex(rng, n);
    const auto q = random_simplex(rng, m);
    const CostMatrix M = random_cost(rng, n, m, /*zero_diag=*/false);
    const ExactSolution sol = exact_wasserstein(M, p, q);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        const double rc = M(i, j) - sol.u[i] - sol.v[j];
        REQUIRE(rc >= -1e-9);                                  // dual feasibility
        if (sol.plan(i, j) > 1e-12) REQUIRE(std::abs(rc) <= 1e-9);  // slackness
      }
    // Strong duality.
    REQUIRE(sol.u.dot(p.values()) + sol.v.dot(q.values()) ==
            Catch::Approx(sol.cost).margin(1e-10));
  }
}

TEST_CASE("uniqueness flag reacts to degenerate cost structure") {
  // Uniform marginals with a constant cost: wildly non-unique.
  const auto u = ProbabilityVector::uniform(3);
  const ExactSolution flat = exact_wasserstein(CostMatrix(Matrix::Constant(3, 3, 1.0)), u, u);
  CHECK_FALSE(flat.unique);

  // Strict metric with distinct entries and p = q: diag(p) is the unique optimum.
  Rng rng(91);
  const auto p = random_simplex(rng, 4);
  const ExactSolution tight = exact_wasserstein(strict_metric_cost(rng, 4), p, p);
  CHECK(tight.unique);
}

TEST_CASE("lambda0 plans: diagonal structure") {
  // n = 2, q > p: [[p, 0], [q - p, 1 - q]].
  const double p = 0.25, q = 0.6;
  const auto [dpp, dpq] = exact_lambda0_plans(bernoulli(p), bernoulli(q));
  CHECK(dpp(0, 0) == Catch::Approx(p).margin(1e-15));
  CHECK(dpp(1, 1) == Catch::Approx(1 - p).margin(1e-15));
  CHECK(dpq(0, 0) == Catch::Approx(p).margin(1e-12));
  CHECK(dpq(0, 1) == Catch::Approx(0.0).margin(1e-12));
  CHECK(dpq(1, 0) == Catch::Approx(q - p).margin(1e-12));
  CHECK(dpq(1, 1) == Catch::Approx(1 - q).margin(1e-12));

  // p = q: both plans are diag(p).
  Rng rng(93);
  const auto pp = random_simplex(rng, 3);
  const auto [d1, d2] = exact_lambda0_plans(pp, pp);
  CHECK((d1.entries() - d2.entries()).cwiseAbs().maxCoeff() < 1e-12);

  // Random n = 4 with a strict metric: diagonal is the entrywise min.
  for (int t = 0; t < 20; ++t) {
    const auto pr = random_simplex(rng, 4);
    const auto qr = random_simplex(rng, 4);
    const CostMatrix M = strict_metric_cost(rng, 4);
    const auto [a, b] = exact_lambda0_plans(pr, qr, M);
    for (Eigen::Index i = 0; i < 4; ++i) {
      REQUIRE(a(i, i) == Catch::Approx(pr[i]).margin(1e-12));
      REQUIRE(b(i, i) == Catch::Approx(std::min(pr[i], qr[i])).margin(1e-12));
    }
  }
}

TEST_CASE("brute force: zero cost gives the product plan") {
  Rng rng(95);
  const auto p = random_simplex(rng, 3);
  const auto q = random_simplex(rng, 3);
  const TransportPlan bf = brute_force_entropy_relaxed(CostMatrix::zero(3, 3), p, q, 1.0, 8);
  CHECK((bf.entries() - product_plan(p, q).entries()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("brute force matches the example 1 closed form") {
  const double p = 0.3, q = 0.55, lambda = 0.8;
  const double eps = std::exp(-1.0 / lambda);
  const double z = -eps * (1 - p - q) +
                   std::sqrt((q - p) * (q - p) / (eps * eps) +
                             eps * eps * (1 - p - q) * (1 - p - q) + 2 * p * (1 - p) +
                             2 * q * (1 - q));
  const double a = (z - (q - p) / eps) / (2 * (1 - p));
  const double b = (z + (q - p) / eps) / (2 * (1 - q));
  const double c = 1.0 / (a * b + eps * (a + b) + 1.0);
  Matrix expect(2, 2);
  expect << c * a * b, c * a * eps, c * b * eps, c;
  const TransportPlan bf =
      brute_force_entropy_relaxed(example1_cost(), bernoulli(p), bernoulli(q), lambda, 8);
  CHECK((bf.entries() - expect).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("brute force cross-validates sinkhorn on random 3x3") {
  Rng rng(97);
  for (int t = 0; t < 6; ++t) {
    const auto p = random_simplex(rng, 3);
    const auto q = random_simplex(rng, 3);
    const CostMatrix M = random_cost(rng, 3, 3, /*zero_diag=*/false);
    for (const double lambda : {0.5, 1.0}) {
      const TransportPlan sk = sinkhorn_solve(M, p, q, lambda, Tolerance(1e-12, 300000)).plan;
      const TransportPlan bf = brute_force_entropy_relaxed(M, p, q, lambda, 6);
      REQUIRE((sk.entries() - bf.entries()).cwiseAbs().maxCoeff() < 1e-4);
    }
  }
}

TEST_CASE("monotone interpolation toward the wasserstein cost") {
  Rng rng(99);
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<Eigen::Index>(rng.integer(2, 5));
    const auto p = random_simplex(rng, n);
    const auto q = random_simplex(rng, n);
    const CostMatrix M = random_cost(rng, n, n, /*zero_diag=*/false);
    const double cw = exact_wasserstein(M, p, q).cost;
    double prev = std::numeric_limits<double>::infinity();
    for (const double lambda : {1.0, 0.3, 0.1, 0.03}) {
      const double dev =
          std::abs(cuturi_function(M, p, q, lambda, Tolerance(1e-11, 500000)) - cw);
      REQUIRE(dev < prev);
      prev = dev;
    }
  }
}

TEST_CASE("non-metricity witness: some q beats p at lambda = 1") {
  // At p = (0.5, 0.5) symmetry makes q = p the minimizer, so probe an
  // asymmetric p; the entropy term pulls the q-minimizer toward uniform.
  const auto p = bernoulli(0.3);
  const Tolerance tol(1e-12, 200000);
  const double cpp = cuturi_function(example1_cost(), p, p, 1.0, tol);
  bool witnessed = false;
  for (double qq = 0.32; qq < 0.65; qq += 0.02) {
    if (cuturi_function(example1_cost(), p, bernoulli(qq), 1.0, tol) < cpp) {
      witnessed = true;
      break;
    }
  }
  CHECK(witnessed);
}

TEST_CASE("oracle preconditions") {
  Rng rng(101);
  const auto p = random_simplex(rng, 5);
  const auto q = random_simplex(rng, 5);
  const CostMatrix M = random_cost(rng, 5, 5);
  CHECK_THROWS_AS(brute_force_entropy_relaxed(M, p, q, 1.0), InvalidArgument);
  Matrix bad = Matrix::Ones(3, 3);
  CHECK_THROWS_AS(
      exact_lambda0_plans(random_simplex(rng, 3), random_simplex(rng, 3), CostMatrix(bad)),
      InvalidArgument);
}
