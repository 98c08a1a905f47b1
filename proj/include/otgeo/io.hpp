// Instance I/O (JSON/CSV), deterministic number formatting, lambda sweeps
// and the aggregate validation report behind the command line tool.
#pragma once

#include "otgeo/core.hpp"
#include "otgeo/divergence.hpp"
#include "otgeo/geometry.hpp"
#include "otgeo/oracle.hpp"
#include "otgeo/sinkhorn.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace otgeo {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Doubles are printed with 17 significant digits, which round-trips exactly.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

struct Instance {
  ProbabilityVector p;
  ProbabilityVector q;
  CostMatrix M;
  std::optional<double> lambda;
  std::map<std::string, std::string> metadata;
  std::vector<std::string> warnings;  // e.g. renormalization applied
};

namespace detail {

inline Vector parse_prob_array(const nlohmann::json& arr, const char* name) {
  if (!arr.is_array() || arr.size() < 2)
    throw ParseError(std::string(name) + " must be an array of length >= 2");
  Vector v(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number())
      throw ParseError(std::string(name) + "[" + std::to_string(i) + "] is not a number");
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    if (!std::isfinite(v[static_cast<Eigen::Index>(i)]) || v[static_cast<Eigen::Index>(i)] < 0.0)
      throw InvalidArgument(std::string(name) + "[" + std::to_string(i) +
                            "] violates entry >= 0 and finite");
  }
  return v;
}

}  // namespace detail

// Parses the shared instance schema {"p": [...], "q": [...], "M": [[...]],
// "lambda": x, "metadata": {...}}.
inline Instance parse_instance(const std::string& text, bool renormalize = false) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("JSON parse error at byte ") + std::to_string(e.byte) + ": " +
                     e.what());
  }
  if (!j.contains("p") || !j.contains("q") || !j.contains("M"))
    throw ParseError("instance requires fields p, q, M");
  Vector pv = detail::parse_prob_array(j["p"], "p");
  Vector qv = detail::parse_prob_array(j["q"], "q");
  const auto& jm = j["M"];
  if (!jm.is_array() || jm.empty() || !jm[0].is_array())
    throw ParseError("M must be a matrix (array of rows)");
  Matrix M(jm.size(), jm[0].size());
  for (size_t i = 0; i < jm.size(); ++i) {
    if (jm[i].size() != jm[0].size())
      throw ParseError("M row " + std::to_string(i) + " has ragged length");
    for (size_t k = 0; k < jm[i].size(); ++k) {
      if (!jm[i][k].is_number())
        throw ParseError("M[" + std::to_string(i) + "][" + std::to_string(k) +
                         "] is not a number");
      const double c = jm[i][k].get<double>();
      if (!std::isfinite(c) || c < 0.0)
        throw InvalidArgument("M[" + std::to_string(i) + "," + std::to_string(k) + "] = " +
                              format_double(c) + " violates 0 <= m_ij < inf");
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = c;
    }
  }
  if (M.rows() != pv.size() || M.cols() != qv.size())
    throw InvalidArgument("dimension mismatch: |p| = " + std::to_string(pv.size()) + ", |q| = " +
                          std::to_string(qv.size()) + ", M is " + std::to_string(M.rows()) + "x" +
                          std::to_string(M.cols()));

  std::vector<std::string> warnings;
  if (renormalize) {
    const double sp = pv.sum(), sq = qv.sum();
    if (std::abs(sp - 1.0) > kSumTol)
      warnings.push_back("p renormalized from sum " + format_double(sp));
    if (std::abs(sq - 1.0) > kSumTol)
      warnings.push_back("q renormalized from sum " + format_double(sq));
  }
  Instance inst{ProbabilityVector::closure(pv, renormalize),
                ProbabilityVector::closure(qv, renormalize), CostMatrix(std::move(M)),
                std::nullopt,
                {},
                std::move(warnings)};
  if (j.contains("lambda")) {
    if (!j["lambda"].is_number()) throw ParseError("lambda must be a number");
    inst.lambda = j["lambda"].get<double>();
  }
  if (j.contains("metadata") && j["metadata"].is_object())
    for (auto it = j["metadata"].begin(); it != j["metadata"].end(); ++it)
      inst.metadata[it.key()] = it.value().is_string() ? it.value().get<std::string>()
                                                       : it.value().dump();
  return inst;
}

inline Instance load_instance(const std::string& path, bool renormalize = false) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_instance(ss.str(), renormalize);
}

// Minimal deterministic JSON writer: insertion order preserved, doubles with
// 17 significant digits.
class JsonWriter {
 public:
  JsonWriter& begin_object() {
    sep();
    out_ += '{';
    first_.push_back(true);
    return *this;
  }
  JsonWriter& end_object() {
    out_ += '}';
    first_.pop_back();
    return *this;
  }
  JsonWriter& begin_array() {
    sep();
    out_ += '[';
    first_.push_back(true);
    return *this;
  }
  JsonWriter& end_array() {
    out_ += ']';
    first_.pop_back();
    return *this;
  }
  JsonWriter& key(const std::string& k) {
    sep();
    out_ += '"' + escape(k) + "\":";
    pending_value_ = true;
    return *this;
  }
  JsonWriter& value(double x) {
    sep();
    out_ += format_double(x);
    return *this;
  }
  JsonWriter& value(long x) {
    sep();
    out_ += std::to_string(x);
    return *this;
  }
  JsonWriter& value(bool b) {
    sep();
    out_ += b ? "true" : "false";
    return *this;
  }
  JsonWriter& value(const std::string& s) {
    sep();
    out_ += '"' + escape(s) + '"';
    return *this;
  }
  JsonWriter& value(const Vector& v) {
    begin_array();
    for (Eigen::Index i = 0; i < v.size(); ++i) value(v[i]);
    end_array();
    return *this;
  }
  JsonWriter& value(const Matrix& m) {
    begin_array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) value(Vector(m.row(i).transpose()));
    end_array();
    return *this;
  }
  const std::string& str() const { return out_; }

 private:
  void sep() {
    if (pending_value_) {
      pending_value_ = false;
      return;
    }
    if (!first_.empty()) {
      if (!first_.back()) out_ += ',';
      first_.back() = false;
    }
  }
  static std::string escape(const std::string& s) {
    std::string r;
    for (char c : s) {
      if (c == '"' || c == '\\') r += '\\';
      r += c;
    }
    return r;
  }
  std::string out_;
  std::vector<bool> first_;
  bool pending_value_ = false;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << content;
}

inline std::string matrix_csv(const Matrix& m) {
  std::string s;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) s += ',';
      s += format_double(m(i, j));
    }
    s += '\n';
  }
  return s;
}

// Row-major CSV; a non-numeric first line is treated as a header and skipped.
inline Matrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        size_t pos = 0;
        row.push_back(std::stod(cell, &pos));
        while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
        if (pos != cell.size()) numeric = false;
      } catch (...) {
        numeric = false;
      }
      if (!numeric) break;
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw ParseError("non-numeric cell in " + path + ": '" + cell + "'");
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("ragged CSV row in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty CSV " + path);
  Matrix m(rows.size(), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows.front().size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

struct SweepSpec {
  double lo = 0.0;
  double hi = 0.0;
  int count = 2;
  enum class Scale { Linear, Log } scale = Scale::Linear;

  std::vector<double> points() const {
    std::vector<double> v(count);
    if (count == 1) {
      v[0] = lo;
      return v;
    }
    for (int i = 0; i < count; ++i) {
      const double t = static_cast<double>(i) / (count - 1);
      v[i] = scale == Scale::Log ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)))
                                 : lo + t * (hi - lo);
    }
    return v;
  }
};

// "lo:hi:log20" or "lo:hi:lin20"; a bare "x" is a single-point sweep.
inline SweepSpec parse_sweep(const std::string& text) {
  SweepSpec s;
  const auto c1 = text.find(':');
  if (c1 == std::string::npos) {
    s.lo = s.hi = std::stod(text);
    s.count = 1;
    return s;
  }
  const auto c2 = text.find(':', c1 + 1);
  if (c2 == std::string::npos) throw ParseError("sweep spec needs lo:hi:{log|lin}N");
  s.lo = std::stod(text.substr(0, c1));
  s.hi = std::stod(text.substr(c1 + 1, c2 - c1 - 1));
  std::string tail = text.substr(c2 + 1);
  if (tail.rfind("log", 0) == 0) {
    s.scale = SweepSpec::Scale::Log;
    tail = tail.substr(3);
  } else if (tail.rfind("lin", 0) == 0) {
    s.scale = SweepSpec::Scale::Linear;
    tail = tail.substr(3);
  }
  s.count = std::stoi(tail);
  if (s.count < 1) throw ParseError("sweep count must be >= 1");
  if (s.count > 1 && !(s.lo < s.hi)) throw ParseError("sweep requires lo < hi");
  if (s.scale == SweepSpec::Scale::Log && !(s.lo > 0.0))
    throw ParseError("log sweep requires lo > 0");
  return s;
}

enum class Quantity { C_lambda, D_lambda, KL, C_W, Psi, LegendreResidual };

inline Quantity quantity_from_name(const std::string& name) {
  if (name == "C_lambda") return Quantity::C_lambda;
  if (name == "D_lambda") return Quantity::D_lambda;
  if (name == "KL") return Quantity::KL;
  if (name == "C_W") return Quantity::C_W;
  if (name == "psi") return Quantity::Psi;
  if (name == "legendre_residual") return Quantity::LegendreResidual;
  throw ParseError("unknown quantity '" + name + "'");
}

inline const char* quantity_name(Quantity q) {
  switch (q) {
    case Quantity::C_lambda: return "C_lambda";
    case Quantity::D_lambda: return "D_lambda";
    case Quantity::KL: return "KL";
    case Quantity::C_W: return "C_W";
    case Quantity::Psi: return "psi";
    case Quantity::LegendreResidual: return "legendre_residual";
  }
  return "?";
}

struct SweepRow {
  double lambda = 0.0;
  std::map<Quantity, double> values;
  std::optional<std::string> error;
};

inline int sweep_thread_cap() {
  if (const char* env = std::getenv("OTGEO_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

// One row per lambda; constant columns (KL, C_W) are computed once.  Rows
// where the solver fails carry an error marker instead of aborting the run.
inline std::vector<SweepRow> run_sweep(const Instance& inst, const SweepSpec& sweep,
                                       const std::vector<Quantity>& quantities,
                                       const Tolerance& tol = Tolerance()) {
  const std::vector<double> lams = sweep.points();
  std::vector<SweepRow> rows(lams.size());
  const auto has = [&](Quantity q) {
    return std::find(quantities.begin(), quantities.end(), q) != quantities.end();
  };

  double kl_const = 0.0, cw_const = 0.0;
  if (has(Quantity::KL)) {
    if (inst.p.size() != inst.q.size())
      throw InvalidArgument("KL column requires |p| == |q|");
    kl_const = kl_divergence(inst.p, inst.q);
  }
  if (has(Quantity::C_W)) cw_const = exact_wasserstein(inst.M, inst.p, inst.q).cost;

  auto eval_row = [&](size_t idx) {
    SweepRow& row = rows[idx];
    row.lambda = lams[idx];
    try {
      for (Quantity q : quantities) {
        switch (q) {
          case Quantity::KL: row.values[q] = kl_const; break;
          case Quantity::C_W: row.values[q] = cw_const; break;
          case Quantity::C_lambda:
            row.values[q] = cuturi_function(inst.M, inst.p, inst.q, row.lambda, tol);
            break;
          case Quantity::D_lambda:
            row.values[q] = lambda_divergence(inst.M, inst.p, inst.q, row.lambda,
                                              ReferenceRule::SourceP,
                                              ScalingFactorRule::LambdaOverOnePlusLambda, tol);
            break;
          case Quantity::Psi: {
            const SinkhornResult r = sinkhorn_solve(inst.M, inst.p, inst.q, row.lambda, tol);
            row.values[q] = potentials_from_scaling(r.scaling).psi;
            break;
          }
          case Quantity::LegendreResidual:
            row.values[q] = legendre_residual(inst.M, inst.p, inst.q, row.lambda, tol);
            break;
        }
      }
    } catch (const std::exception& e) {
      row.values.clear();
      row.error = std::string("lambda = ") + format_double(row.lambda) + ": " + e.what();
    }
  };

  const int nthreads = std::min<int>(sweep_thread_cap(), static_cast<int>(lams.size()));
  if (nthreads <= 1) {
    for (size_t i = 0; i < lams.size(); ++i) eval_row(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < lams.size(); i = next.fetch_add(1)) eval_row(i);
      });
    for (auto& th : pool) th.join();
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows,
                             const std::vector<Quantity>& quantities) {
  std::string s = "lambda";
  for (Quantity q : quantities) s += std::string(",") + quantity_name(q);
  s += ",error\n";
  for (const auto& row : rows) {
    s += format_double(row.lambda);
    for (Quantity q : quantities) {
      s += ',';
      const auto it = row.values.find(q);
      if (it != row.values.end()) s += format_double(it->second);
    }
    s += ',';
    if (row.error) s += '"' + *row.error + '"';
    s += '\n';
  }
  return s;
}

struct ValidationCheck {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  unsigned seed = 0;
  bool ok = true;
};

// Aggregate identity checks on one instance: marginal feasibility, the
// Legendre identity, Fisher-block agreement with the finite-difference
// Hessian of psi, equality of the two divergence routes, and a convexity
// probe of C_lambda.
inline ValidationReport validate_all(const Instance& inst, const Tolerance& tol = Tolerance(),
                                     unsigned seed = 12345) {
  if (!inst.lambda) throw InvalidArgument("validate_all: instance has no lambda");
  const double lambda = *inst.lambda;
  ValidationReport rep;
  rep.seed = seed;
  auto add = [&rep](const std::string& name, double residual, double tolerance) {
    rep.checks.push_back({name, residual, tolerance, residual <= tolerance});
    rep.ok = rep.ok && rep.checks.back().pass;
  };

  // Marginal feasibility.
  double marg_res;
  try {
    const SinkhornResult r = sinkhorn_solve(inst.M, inst.p, inst.q, lambda, tol);
    marg_res = r.residual;
  } catch (const NonConvergence& e) {
    marg_res = e.residual;
  }
  add("marginal_residual", marg_res, tol.marginal_tol);
  if (marg_res > tol.marginal_tol) return rep;  // downstream identities need a converged solve

  add("legendre_residual", legendre_residual(inst.M, inst.p, inst.q, lambda, tol), 1e-8);

  // Fisher: finite-difference Hessian of psi against the stated blocks,
  // one fitted scale.
  {
    const SinkhornResult r = sinkhorn_solve(inst.M, inst.p, inst.q, lambda,
                                            Tolerance(1e-12, tol.max_iter));
    const DualPotentials d = potentials_from_scaling(r.scaling);
    const Eigen::Index s = inst.M.rows(), rr = inst.M.cols();
    const Eigen::Index dim = s - 1 + rr - 1;
    const double h = 1e-5;
    Matrix H(dim, dim);
    auto psi_at = [&](const Vector& x) {
      Vector a = d.alpha, b = d.beta;
      a.head(s - 1) += x.head(s - 1);
      b.head(rr - 1) += x.tail(rr - 1);
      return psi_value(inst.M, a, b, lambda);
    };
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        Vector ei = Vector::Zero(dim), ej = Vector::Zero(dim);
        ei[i] = h;
        ej[j] = h;
        const double v = (psi_at(ei + ej) - psi_at(ei - ej) - psi_at(-ei + ej) +
                          psi_at(-ei - ej)) /
                         (4.0 * h * h);
        H(i, j) = v;
        H(j, i) = v;
      }
    const Matrix B = fisher_info_theta(r.plan);
    const double scale = (H.array() * B.array()).sum() / (B.array() * B.array()).sum();
    const double rel = (H - scale * B).cwiseAbs().maxCoeff() / B.cwiseAbs().maxCoeff();
    add("fisher_fd_relative_error", rel, 1e-4);
  }

  // Agreement of the two divergence routes.
  if (inst.p.size() == inst.q.size()) {
    const double d_kl = lambda_divergence(inst.M, inst.p, inst.q, lambda, ReferenceRule::SourceP,
                                          ScalingFactorRule::LambdaOverOnePlusLambda,
                                          Tolerance(1e-11, tol.max_iter));
    const double d_br = bregman_like_divergence(inst.M, inst.p, inst.q, lambda,
                                                Tolerance(1e-11, tol.max_iter));
    add("divergence_route_gap", std::abs(d_kl - d_br), 1e-6);
  }

  // Convexity probe of C_lambda on random convex combinations.
  {
    std::mt19937_64 rng(seed);
    auto uniform = [&rng]() { return (rng() >> 11) * 0x1.0p-53; };
    auto rand_simplex = [&](Eigen::Index n) {
      Vector v(n);
      for (Eigen::Index i = 0; i < n; ++i) v[i] = 0.05 - std::log(1.0 - uniform());
      return ProbabilityVector::interior(v, /*renormalize=*/true);
    };
    const Tolerance probe_tol(1e-11, tol.max_iter);
    double worst = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < 50; ++t) {
      const ProbabilityVector p2 = rand_simplex(inst.p.size());
      const ProbabilityVector q2 = rand_simplex(inst.q.size());
      const double nu = uniform();
      const ProbabilityVector pm = ProbabilityVector::interior(
          nu * inst.p.values() + (1.0 - nu) * p2.values(), /*renormalize=*/true);
      const ProbabilityVector qm = ProbabilityVector::interior(
          nu * inst.q.values() + (1.0 - nu) * q2.values(), /*renormalize=*/true);
      const double lhs = cuturi_function(inst.M, pm, qm, lambda, probe_tol);
      const double rhs = nu * cuturi_function(inst.M, inst.p, inst.q, lambda, probe_tol) +
                         (1.0 - nu) * cuturi_function(inst.M, p2, q2, lambda, probe_tol);
      worst = std::max(worst, lhs - rhs);
    }
    add("convexity_violation", std::max(worst, 0.0), 1e-9);
  }
  return rep;
}

inline std::string validation_json(const ValidationReport& rep) {
  JsonWriter w;
  w.begin_object();
  w.key("ok").value(rep.ok);
  w.key("seed").value(static_cast<long>(rep.seed));
  w.key("checks").begin_array();
  for (const auto& c : rep.checks) {
    w.begin_object();
    w.key("name").value(c.name);
    w.key("residual").value(c.residual);
    w.key("tolerance").value(c.tolerance);
    w.key("pass").value(c.pass);
    w.end_object();
  }
  w.end_array();
  w.end_object();
  return w.str();
}

}  // namespace otgeo
