#include "otgeo/geometry.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include "test_support.hpp"

using namespace otgeo;
using otgeo_test::Rng;
using otgeo_test::random_cost;
using otgeo_test::random_simplex;

namespace {
const Tolerance kTight(1e-12, 500000);
}

TEST_CASE("potentials: uniform case and round trip") {
  // M = 0, uniform marginals: a = b = 1 vectors, c = 1/(s r), alpha = beta = 0,
  // psi = (lambda/(1+lambda)) log(s r).
  const double lambda = 1.3;
  const auto p = ProbabilityVector::uniform(3);
  const auto q = ProbabilityVector::uniform(4);
  const CostMatrix M = CostMatrix::zero(3, 4);
  const SinkhornResult r = sinkhorn_solve(M, p, q, lambda, kTight);
  const DualPotentials d = potentials_from_scaling(r.scaling);
  CHECK(d.alpha.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(d.beta.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(d.psi == Catch::Approx(lambda / (1.0 + lambda) * std::log(12.0)).epsilon(1e-12));

  Rng rng(51);
  for (int t = 0; t < 20; ++t) {
    const auto n = static_cast<Eigen::Index>(rng.integer(2, 6));
    const auto m = static_cast<Eigen::Index>(rng.integer(2, 6));
    const CostMatrix Mr = random_cost(rng, n, m, /*zero_diag=*/false);
    const auto pr = random_simplex(rng, n);
    const auto qr = random_simplex(rng, m);
    const double lam = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    const SinkhornResult rr = sinkhorn_solve(Mr, pr, qr, lam, kTight);
    const DualPotentials dr = potentials_from_scaling(rr.scaling);
    CHECK(dr.alpha[n - 1] == 0.0);
    CHECK(dr.beta[m - 1] == 0.0);
    // Plan rebuilt from (alpha, beta, psi) reproduces the solver plan.
    const Matrix rebuilt = plan_from_potentials(dr, Mr);
    CHECK((rebuilt - rr.plan.entries()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("example 1 potentials from the closed-form scalings") {
  const double lambda = 0.8, p1 = 0.35, q1 = 0.6;
  Matrix m(2, 2);
  m << 0.0, 1.0, 1.0, 0.0;
  const CostMatrix M(m);
  Vector pv(2), qv(2);
  pv << p1, 1 - p1;
  qv << q1, 1 - q1;
  SinkhornOptions opts;
  opts.gauge = Gauge::LastEntryOne;
  const SinkhornResult r = sinkhorn_solve(M, ProbabilityVector::interior(pv),
                                          ProbabilityVector::interior(qv), lambda, kTight, opts);
  const DualPotentials d = potentials_from_scaling(r.scaling);
  const double w = lambda / (1.0 + lambda);
  CHECK(d.alpha[0] == Catch::Approx(w * std::log(r.scaling.a[0])).epsilon(1e-13));
  CHECK(d.beta[0] == Catch::Approx(w * std::log(r.scaling.b[0])).epsilon(1e-13));
  CHECK(d.psi == Catch::Approx(-w * r.scaling.log_c).epsilon(1e-13));
}

TEST_CASE("cuturi function: zero cost closed form and convexity probe") {
  Rng rng(53);
  const auto p = random_simplex(rng, 4);
  const auto q = random_simplex(rng, 4);
  const double lambda = 0.9;
  // Optimal plan for M = 0 is p (x) q, so C = -(lambda/(1+lambda)) (H(p)+H(q)).
  const double c0 = cuturi_function(CostMatrix::zero(4, 4), p, q, lambda, kTight);
  CHECK(c0 ==
        Catch::Approx(-lambda / (1.0 + lambda) * (p.entropy() + q.entropy())).epsilon(1e-11));

  // Convexity in (p, q) on random convex combinations.
  const CostMatrix M = random_cost(rng, 4, 4);
  for (int t = 0; t < 200; ++t) {
    const auto p1 = random_simplex(rng, 4), p2 = random_simplex(rng, 4);
    const auto q1 = random_simplex(rng, 4), q2 = random_simplex(rng, 4);
    const double nu = rng.uniform();
    const auto pm = ProbabilityVector::interior(nu * p1.values() + (1 - nu) * p2.values(),
                                                /*renormalize=*/true);
    const auto qm = ProbabilityVector::interior(nu * q1.values() + (1 - nu) * q2.values(),
                                                /*renormalize=*/true);
    const double lam = std::exp(rng.uniform(std::log(0.2), std::log(5.0)));
    const double lhs = cuturi_function(M, pm, qm, lam, kTight);
    const double rhs = nu * cuturi_function(M, p1, q1, lam, kTight) +
                       (1 - nu) * cuturi_function(M, p2, q2, lam, kTight);
    REQUIRE(lhs <= rhs + 1e-9);
  }
}

TEST_CASE("legendre identity") {
  // M = 0 uniform: residual vanishes analytically.
  CHECK(legendre_residual(CostMatrix::zero(3, 3), ProbabilityVector::uniform(3),
                          ProbabilityVector::uniform(3), 2.0, kTight) < 1e-13);

  Rng rng(57);
  for (int t = 0; t < 500; ++t) {
    const auto n = static_cast<Eigen::Index>(rng.integer(2, 6));
    const auto m = static_cast<Eigen::Index>(rng.integer(2, 6));
    const CostMatrix M = random_cost(rng, n, m, /*zero_diag=*/false);
    const auto p = random_simplex(rng, n);
    const auto q = random_simplex(rng, m);
    const double lam = std::exp(rng.uniform(std::log(0.1), std::log(20.0)));
    REQUIRE(legendre_residual(M, p, q, lam, Tolerance(1e-11, 500000)) <= 1e-8);
  }
}

TEST_CASE("legendre gradient: finite differences of psi recover the marginals") {
  Rng rng(59);
  const CostMatrix M = random_cost(rng, 4, 3, /*zero_diag=*/false);
  const auto p = random_simplex(rng, 4);
  const auto q = random_simplex(rng, 3);
  const double lambda = 0.7;
  const SinkhornResult r = sinkhorn_solve(M, p, q, lambda, kTight);
  const DualPotentials d = potentials_from_scaling(r.scaling);

  const double h = 1e-6;
  for (Eigen::Index i = 0; i < 3; ++i) {  // alpha components 0..s-2
    Vector ap = d.alpha, am = d.alpha;
    ap[i] += h;
    am[i] -= h;
    const double grad = (psi_value(M, ap, d.beta, lambda) - psi_value(M, am, d.beta, lambda)) /
                        (2.0 * h);
    CHECK(grad == Catch::Approx(p[i]).margin(1e-5));
  }
  for (Eigen::Index j = 0; j < 2; ++j) {
    Vector bp = d.beta, bm = d.beta;
    bp[j] += h;
    bm[j] -= h;
    const double grad = (psi_value(M, d.alpha, bp, lambda) - psi_value(M, d.alpha, bm, lambda)) /
                        (2.0 * h);
    CHECK(grad == Catch::Approx(q[j]).margin(1e-5));
  }
}

TEST_CASE("fisher blocks: product plan, 2x2 closed form, positive semidefinite") {
  Rng rng(61);
  const auto p = random_simplex(rng, 4);
  const auto q = random_simplex(rng, 4);
  const Matrix G0 = fisher_info_theta(product_plan(p, q));
  CHECK(G0.topRightCorner(3, 3).cwiseAbs().maxCoeff() < 1e-15);

  Matrix m(2, 2);
  m << 0.4, 0.1, 0.1, 0.4;
  const Matrix G1 = fisher_info_theta(TransportPlan(m));
  CHECK(G1(0, 0) == Catch::Approx(0.25).epsilon(1e-14));
  CHECK(G1(1, 1) == Catch::Approx(0.25).epsilon(1e-14));
  CHECK(G1(0, 1) == Catch::Approx(0.15).epsilon(1e-14));

  for (int t = 0; t < 50; ++t) {
    const auto n = static_cast<Eigen::Index>(rng.integer(2, 5));
    const CostMatrix M = random_cost(rng, n, n);
    const auto pr = random_simplex(rng, n);
    const auto qr = random_simplex(rng, n);
    const double lam = std::exp(rng.uniform(std::log(0.2), std::log(5.0)));
    const Matrix G = fisher_info_theta(sinkhorn_solve(M, pr, qr, lam, kTight).plan);
    REQUIRE(G.isApprox(G.transpose(), 1e-12));
    const Eigen::SelfAdjointEigenSolver<Matrix> es(G);
    REQUIRE(es.eigenvalues().minCoeff() > -1e-10);
    REQUIRE(es.eigenvalues().minCoeff() > 0.0);  // full support: strictly pd
  }
}

TEST_CASE("fisher blocks vs finite-difference hessian of psi") {
  Rng rng(67);
  for (int t = 0; t < 15; ++t) {
    const auto n = static_cast<Eigen::Index>(rng.integer(2, 4));
    const CostMatrix M = random_cost(rng, n, n);
    const auto p = random_simplex(rng, n);
    const auto q = random_simplex(rng, n);
    const double lam = std::exp(rng.uniform(std::log(0.3), std::log(3.0)));
    const SinkhornResult r = sinkhorn_solve(M, p, q, lam, kTight);
    const DualPotentials d = potentials_from_scaling(r.scaling);

    const Eigen::Index dim = 2 * (n - 1);
    const double h = 1e-5;
    auto psi_at = [&](const Vector& x) {
      Vector a = d.alpha, b = d.beta;
      a.head(n - 1) += x.head(n - 1);
      b.head(n - 1) += x.tail(n - 1);
      return psi_value(M, a, b, lam);
    };
    Matrix H(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        Vector ei = Vector::Zero(dim), ej = Vector::Zero(dim);
        ei[i] = h;
        ej[j] = h;
        const double v =
            (psi_at(ei + ej) - psi_at(ei - ej) - psi_at(-ei + ej) + psi_at(-ei - ej)) /
            (4.0 * h * h);
        H(i, j) = v;
        H(j, i) = v;
      }
    const Matrix B = fisher_info_theta(r.plan);
    const double scale = (H.array() * B.array()).sum() / (B.array() * B.array()).sum();
    REQUIRE((H - scale * B).cwiseAbs().maxCoeff() / B.cwiseAbs().maxCoeff() <= 1e-4);
    // The proportionality constant is (1+lambda)/lambda.
    REQUIRE(scale == Catch::Approx((1.0 + lam) / lam).epsilon(1e-4));
  }
}

TEST_CASE("canonical divergence") {
  Rng rng(71);
  const CostMatrix M = random_cost(rng, 3, 3);
  const auto p = random_simplex(rng, 3);
  const auto q = random_simplex(rng, 3);
  const double lambda = 0.8;

  CHECK(canonical_divergence(M, p, q, p, q, lambda, kTight) < 1e-12);

  // On M = 0 the plans are products: KL[p (x) q : p2 (x) q2] splits.
  const auto p2 = random_simplex(rng, 3);
  const auto q2 = random_simplex(rng, 3);
  const double d0 = canonical_divergence(CostMatrix::zero(3, 3), p, q, p2, q2, lambda, kTight);
  CHECK(d0 == Catch::Approx(kl_divergence(p, p2) + kl_divergence(q, q2)).epsilon(1e-9));

  // Dual route equals the plan-KL route.
  for (int t = 0; t < 20; ++t) {
    const auto a = random_simplex(rng, 3), b = random_simplex(rng, 3);
    const auto c = random_simplex(rng, 3), d = random_simplex(rng, 3);
    const double lam = std::exp(rng.uniform(std::log(0.2), std::log(5.0)));
    const double kl_route = canonical_divergence(M, a, b, c, d, lam, kTight);
    const double dual_route = canonical_divergence_dual_route(M, a, b, c, d, lam, kTight);
    REQUIRE(kl_route >= 0.0);
    REQUIRE(std::abs(kl_route - dual_route) <= 1e-8);
  }
}

TEST_CASE("phi hessian blocks match finite differences of the cuturi function") {
  Rng rng(73);
  const CostMatrix M = random_cost(rng, 3, 3);
  const auto p = random_simplex(rng, 3);
  const auto q = random_simplex(rng, 3);
  const double lambda = 0.8;
  const SinkhornResult r = sinkhorn_solve(M, p, q, lambda, kTight);
  const MetricBlocks mb = phi_hessian_blocks(r.plan, lambda);

  const double h = 1e-4;
  auto C_at = [&](const Vector& dp, const Vector& dq) {
    return cuturi_function(M, ProbabilityVector::interior(p.values() + dp, true),
                           ProbabilityVector::interior(q.values() + dq, true), lambda, kTight);
  };
  // d2C/dq_a dq_b in reduced coordinates (last entry compensates).
  for (Eigen::Index a = 0; a < 2; ++a)
    for (Eigen::Index b = 0; b < 2; ++b) {
      Vector ea = Vector::Zero(3), eb = Vector::Zero(3);
      ea[a] = h;
      ea[2] = -h;
      eb[b] = h;
      eb[2] = -h;
      const double fd = (C_at(Vector::Zero(3), ea + eb) - C_at(Vector::Zero(3), ea - eb) -
                         C_at(Vector::Zero(3), -ea + eb) + C_at(Vector::Zero(3), -ea - eb)) /
                        (4.0 * h * h);
      CHECK(mb.qq(a, b) == Catch::Approx(fd).epsilon(2e-3).margin(1e-6));
    }
  // Cross block d2C/dp_a dq_b.
  for (Eigen::Index a = 0; a < 2; ++a)
    for (Eigen::Index b = 0; b < 2; ++b) {
      Vector ea = Vector::Zero(3), eb = Vector::Zero(3);
      ea[a] = h;
      ea[2] = -h;
      eb[b] = h;
      eb[2] = -h;
      const double fd = (C_at(ea, eb) - C_at(ea, -eb) - C_at(-ea, eb) + C_at(-ea, -eb)) /
                        (4.0 * h * h);
      CHECK(mb.pq(a, b) == Catch::Approx(fd).epsilon(2e-3).margin(1e-6));
    }
}
