// Core types for entropy-relaxed optimal transport on the probability simplex:
// probability vectors, cost matrices, transport plans, and the elementary
// information measures (entropy, KL divergence, product plans, marginals).
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace otgeo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Normalization slack accepted by validating constructors.
inline constexpr double kSumTol = 1e-12;

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when KL[P:Q] is requested with P_ij > 0 on a zero of Q.
class SupportViolation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Thrown by iterative solvers that hit their iteration cap.
class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(const std::string& what, double residual, long iterations)
      : std::runtime_error(what), residual(residual), iterations(iterations) {}
  double residual;
  long iterations;
};

namespace detail {

inline void check_finite(const Vector& v, const char* name) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw InvalidArgument(std::string(name) + "[" + std::to_string(i) + "] is not finite");
}

}  // namespace detail

// Point of the simplex S_{n-1} (strict constructor) or of its closure
// (entries may be zero).  Entries must sum to one within kSumTol unless
// renormalization is requested.
class ProbabilityVector {
 public:
  // Strictly positive entries, the open simplex.
  static ProbabilityVector interior(Vector v, bool renormalize = false) {
    validate(v, /*allow_zero=*/false, renormalize);
    return ProbabilityVector(std::move(v));
  }

  // Entries >= 0; closure points arise as marginals of sparse plans and
  // in the lambda -> 0 limits.
  static ProbabilityVector closure(Vector v, bool renormalize = false) {
    validate(v, /*allow_zero=*/true, renormalize);
    return ProbabilityVector(std::move(v));
  }

  static ProbabilityVector uniform(Eigen::Index n) {
    return ProbabilityVector(Vector::Constant(n, 1.0 / static_cast<double>(n)));
  }

  const Vector& values() const { return v_; }
  double operator[](Eigen::Index i) const { return v_[i]; }
  Eigen::Index size() const { return v_.size(); }
  bool strictly_positive() const { return v_.minCoeff() > 0.0; }

  double entropy() const {
    double h = 0.0;
    for (Eigen::Index i = 0; i < v_.size(); ++i)
      if (v_[i] > 0.0) h -= v_[i] * std::log(v_[i]);
    return h;
  }

 private:
  explicit ProbabilityVector(Vector v) : v_(std::move(v)) {}

  static void validate(Vector& v, bool allow_zero, bool renormalize) {
    if (v.size() < 2) throw InvalidArgument("probability vector needs length >= 2");
    detail::check_finite(v, "p");
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (v[i] < 0.0 || (!allow_zero && v[i] == 0.0))
        throw InvalidArgument("p[" + std::to_string(i) + "] = " + std::to_string(v[i]) +
                              (allow_zero ? " violates entry >= 0" : " violates entry > 0"));
    }
    const double s = v.sum();
    if (renormalize) {
      if (s <= 0.0) throw InvalidArgument("cannot renormalize: entries sum to zero");
      v /= s;
    } else if (std::abs(s - 1.0) > kSumTol) {
      throw InvalidArgument("entries sum to " + std::to_string(s) + ", not 1 within 1e-12");
    }
  }

  Vector v_;
};

// Per-unit transport costs m_ij >= 0.
class CostMatrix {
 public:
  explicit CostMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() < 1 || m_.cols() < 1) throw InvalidArgument("empty cost matrix");
    for (Eigen::Index i = 0; i < m_.rows(); ++i)
      for (Eigen::Index j = 0; j < m_.cols(); ++j) {
        const double c = m_(i, j);
        if (!std::isfinite(c) || c < 0.0)
          throw InvalidArgument("M[" + std::to_string(i) + "," + std::to_string(j) +
                                "] = " + std::to_string(c) + " violates 0 <= m_ij < inf");
      }
  }

  const Matrix& entries() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  Eigen::Index rows() const { return m_.rows(); }
  Eigen::Index cols() const { return m_.cols(); }

  static CostMatrix zero(Eigen::Index s, Eigen::Index r) {
    return CostMatrix(Matrix::Zero(s, r));
  }

 private:
  Matrix m_;
};

// Joint distribution over X_S x X_R: entries >= 0 summing to one.
class TransportPlan {
 public:
  explicit TransportPlan(Matrix m, bool renormalize = false) : m_(std::move(m)) {
    if (m_.rows() < 1 || m_.cols() < 1) throw InvalidArgument("empty plan");
    double s = 0.0;
    for (Eigen::Index i = 0; i < m_.rows(); ++i)
      for (Eigen::Index j = 0; j < m_.cols(); ++j) {
        const double x = m_(i, j);
        if (!std::isfinite(x) || x < 0.0)
          throw InvalidArgument("P[" + std::to_string(i) + "," + std::to_string(j) +
                                "] = " + std::to_string(x) + " violates entry >= 0");
        s += x;
      }
    if (renormalize) {
      if (s <= 0.0) throw InvalidArgument("cannot renormalize: plan sums to zero");
      m_ /= s;
    } else if (std::abs(s - 1.0) > kSumTol) {
      throw InvalidArgument("plan sums to " + std::to_string(s) + ", not 1 within 1e-12");
    }
  }

  const Matrix& entries() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  Eigen::Index rows() const { return m_.rows(); }
  Eigen::Index cols() const { return m_.cols(); }

  Vector row_sums() const { return m_.rowwise().sum(); }
  Vector col_sums() const { return m_.colwise().sum().transpose(); }

 private:
  Matrix m_;
};

// Convergence knobs shared by the iterative solvers.
struct Tolerance {
  double marginal_tol = 1e-9;  // L1 error on each marginal
  long max_iter = 100000;
  double value_tol = 1e-8;  // first-order residual for outer optimizers

  Tolerance() = default;
  Tolerance(double marginal_tol, long max_iter, double value_tol = 1e-8)
      : marginal_tol(marginal_tol), max_iter(max_iter), value_tol(value_tol) {
    if (!(marginal_tol > 0.0)) throw InvalidArgument("marginal_tol must be > 0");
    if (max_iter < 1) throw InvalidArgument("max_iter must be >= 1");
  }
};

namespace detail {

// Shannon entropy of a nonnegative matrix, 0 log 0 = 0.
inline double entropy(const Matrix& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (p(i, j) > 0.0) h -= p(i, j) * std::log(p(i, j));
  return h;
}

inline double kl(const Matrix& p, const Matrix& q) {
  double d = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double pij = p(i, j);
      if (pij > 0.0) {
        const double qij = q(i, j);
        if (qij <= 0.0)
          throw SupportViolation("KL[P:Q]: P(" + std::to_string(i) + "," + std::to_string(j) +
                                 ") > 0 but Q is zero there");
        d += pij * std::log(pij / qij);
      }
    }
  return d;
}

inline double kl(const Vector& p, const Vector& q) {
  double d = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) {
      if (q[i] <= 0.0) throw SupportViolation("KL[p:q]: support violation at " + std::to_string(i));
      d += p[i] * std::log(p[i] / q[i]);
    }
  return d;
}

}  // namespace detail

// H(P) = -sum P_ij log P_ij, in nats.
inline double entropy(const TransportPlan& plan) { return detail::entropy(plan.entries()); }

// KL[P:Q] = sum P_ij log(P_ij / Q_ij); throws SupportViolation if P charges
// a zero of Q.
inline double kl_divergence(const TransportPlan& p, const TransportPlan& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw InvalidArgument("kl_divergence: dimension mismatch");
  return detail::kl(p.entries(), q.entries());
}

inline double kl_divergence(const ProbabilityVector& p, const ProbabilityVector& q) {
  if (p.size() != q.size()) throw InvalidArgument("kl_divergence: dimension mismatch");
  return detail::kl(p.values(), q.values());
}

// The independent plan p (x) q; the entropy maximizer over U(p, q).
inline TransportPlan product_plan(const ProbabilityVector& p, const ProbabilityVector& q) {
  return TransportPlan(p.values() * q.values().transpose());
}

// (row sums, column sums) as closure points.
inline std::pair<ProbabilityVector, ProbabilityVector> marginals(const TransportPlan& plan) {
  return {ProbabilityVector::closure(plan.row_sums(), /*renormalize=*/true),
          ProbabilityVector::closure(plan.col_sums(), /*renormalize=*/true)};
}

}  // namespace otgeo
