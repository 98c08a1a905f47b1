// otgeo: command line front end for the entropy-relaxed transport library.
//
// Exit codes: 0 ok, 2 validation failure (constraint violations, failed
// checks), 3 solver non-convergence, 4 I/O or parse errors.

#include "otgeo/otgeo.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace otgeo;

struct GlobalOpts {
  double tol = 1e-9;
  long max_iter = 100000;
  std::string gauge = "sum-one";
  bool renormalize = false;
  std::string out;
  std::string format = "json";
};

Tolerance make_tol(const GlobalOpts& g) { return Tolerance(g.tol, g.max_iter); }

Gauge parse_gauge(const std::string& s) {
  if (s == "sum-one") return Gauge::SumOne;
  if (s == "last-entry-one") return Gauge::LastEntryOne;
  throw ParseError("unknown gauge '" + s + "' (sum-one | last-entry-one)");
}

ReferenceRule parse_ref(const std::string& s) {
  if (s == "source-p") return ReferenceRule::SourceP;
  if (s == "arithmetic-mean") return ReferenceRule::ArithmeticMean;
  if (s == "geometric-mean") return ReferenceRule::GeometricMean;
  throw ParseError("unknown reference rule '" + s + "'");
}

void emit(const GlobalOpts& g, const std::string& content) {
  if (g.out.empty())
    std::cout << content << "\n";
  else
    write_file(g.out, content);
}

Vector parse_comma_list(const std::string& s) {
  std::vector<double> vals;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  Vector v(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) v[static_cast<Eigen::Index>(i)] = vals[i];
  return v;
}

double require_lambda(const Instance& inst, double cli_lambda) {
  if (cli_lambda > 0.0) return cli_lambda;
  if (inst.lambda && *inst.lambda > 0.0) return *inst.lambda;
  throw InvalidArgument("lambda must be supplied (instance field or --lambda)");
}

int cmd_solve(const GlobalOpts& g, const std::string& instance_path, double lambda) {
  const Instance inst = load_instance(instance_path, g.renormalize);
  const double lam = require_lambda(inst, lambda);
  SinkhornOptions opts;
  opts.gauge = parse_gauge(g.gauge);
  const SinkhornResult r = sinkhorn_solve(inst.M, inst.p, inst.q, lam, make_tol(g), opts);
  const DualPotentials d = potentials_from_scaling(r.scaling);
  const double c_lambda = cuturi_value(inst.M, r.plan.entries(), lam);

  JsonWriter w;
  w.begin_object();
  w.key("lambda").value(lam);
  w.key("gauge").value(g.gauge);
  w.key("a").value(r.scaling.a);
  w.key("b").value(r.scaling.b);
  w.key("c").value(r.scaling.c);
  w.key("log_c").value(r.scaling.log_c);
  w.key("alpha").value(d.alpha);
  w.key("beta").value(d.beta);
  w.key("psi").value(d.psi);
  w.key("C_lambda").value(c_lambda);
  w.key("iterations").value(r.iterations);
  w.key("residual").value(r.residual);
  for (const auto& warn : inst.warnings) {
    w.key("warning").value(warn);
    break;
  }
  w.end_object();

  if (g.out.empty()) {
    std::cout << w.str() << "\n" << matrix_csv(r.plan.entries());
  } else {
    write_file(g.out, matrix_csv(r.plan.entries()));
    write_file(g.out + ".json", w.str());
  }
  return 0;
}

int cmd_exact(const GlobalOpts& g, const std::string& instance_path) {
  const Instance inst = load_instance(instance_path, g.renormalize);
  const ExactSolution sol = exact_wasserstein(inst.M, inst.p, inst.q);
  JsonWriter w;
  w.begin_object();
  w.key("cost").value(sol.cost);
  w.key("unique").value(sol.unique);
  w.key("u").value(sol.u);
  w.key("v").value(sol.v);
  w.key("plan").value(sol.plan.entries());
  w.end_object();
  emit(g, w.str());
  return 0;
}

int cmd_divergence(const GlobalOpts& g, const std::string& instance_path,
                   const std::string& sweep_spec, const std::string& ref) {
  const Instance inst = load_instance(instance_path, g.renormalize);
  const SweepSpec sweep = parse_sweep(sweep_spec);
  const ReferenceRule rule = parse_ref(ref);
  const Tolerance tol = make_tol(g);

  const double kl = kl_divergence(inst.p, inst.q);
  std::string csv = "lambda,C_lambda,D_lambda,KL,error\n";
  for (const double lam : sweep.points()) {
    csv += format_double(lam);
    try {
      const double c = cuturi_function(inst.M, inst.p, inst.q, lam, tol);
      const double d = lambda_divergence(inst.M, inst.p, inst.q, lam, rule,
                                         ScalingFactorRule::LambdaOverOnePlusLambda, tol);
      csv += "," + format_double(c) + "," + format_double(d) + "," + format_double(kl) + ",";
    } catch (const std::exception& e) {
      csv += ",,," + format_double(kl) + ",\"" + std::string(e.what()) + "\"";
    }
    csv += "\n";
  }
  emit(g, csv);
  return 0;
}

int cmd_geometry(const GlobalOpts& g, const std::string& instance_path, const std::string& check,
                 double lambda) {
  Instance inst = load_instance(instance_path, g.renormalize);
  inst.lambda = require_lambda(inst, lambda);
  const ValidationReport rep = validate_all(inst, make_tol(g));
  JsonWriter w;
  w.begin_object();
  w.key("check").value(check);
  w.key("results").begin_array();
  bool ok = true;
  for (const auto& c : rep.checks) {
    const bool wanted = check == "all" || (check == "legendre" && c.name == "legendre_residual") ||
                        (check == "fisher" && c.name == "fisher_fd_relative_error") ||
                        (check == "convexity" && c.name == "convexity_violation");
    if (!wanted) continue;
    w.begin_object();
    w.key("name").value(c.name);
    w.key("residual").value(c.residual);
    w.key("tolerance").value(c.tolerance);
    w.key("pass").value(c.pass);
    w.end_object();
    ok = ok && c.pass;
  }
  w.end_array();
  w.key("ok").value(ok);
  w.end_object();
  emit(g, w.str());
  return ok ? 0 : 2;
}

int cmd_gaussian(const GlobalOpts& g, const std::string& p_spec, const std::string& q_spec,
                 double lambda) {
  const Vector pv = parse_comma_list(p_spec), qv = parse_comma_list(q_spec);
  if (pv.size() != 2 || qv.size() != 2)
    throw InvalidArgument("--p/--q take mean,variance pairs");
  const Gaussian1D p(pv[0], pv[1]), q(qv[0], qv[1]);
  if (!(lambda > 0.0)) throw InvalidArgument("gaussian: --lambda must be > 0");
  const GaussianPlanParams plan = gaussian_plan(p, q, lambda);
  const auto [cinf, c0] = gaussian_center_limits(p, q);
  JsonWriter w;
  w.begin_object();
  w.key("lambda").value(lambda);
  w.key("C_lambda").value(gaussian_cuturi(p, q, lambda));
  w.key("D_lambda").value(gaussian_lambda_divergence(p, q, lambda));
  w.key("D_lambda_unit_scale")
      .value(gaussian_lambda_divergence(p, q, lambda, ScalingFactorRule::Unit));
  w.key("KL").value(gaussian_kl(p, q));
  // The two lambda-limits of the scaled divergence.
  w.key("D_limit_large_lambda").value(gaussian_kl(p, q));
  {
    const double sp = p.sigma(), sq = q.sigma();
    w.key("D_limit_small_lambda")
        .value(sp / sq * ((p.mu - q.mu) * (p.mu - q.mu) + (sp - sq) * (sp - sq)));
  }
  w.key("plan").begin_object();
  w.key("sigma_tilde2").value(plan.sigma_tilde2);
  w.key("sigma_tilde_prime2").value(plan.sigma_tilde_prime2);
  w.key("mu").value(Vector(plan.mu_vec));
  w.key("Sigma").value(Matrix(plan.Sigma));
  w.end_object();
  w.key("center_limit_large_lambda").begin_object();
  w.key("mu").value(cinf.mu);
  w.key("sigma2").value(cinf.sigma2);
  w.end_object();
  w.key("center_limit_small_lambda").begin_object();
  w.key("mu").value(c0.mu);
  w.key("sigma2").value(c0.sigma2);
  w.end_object();
  w.end_object();
  emit(g, w.str());
  return 0;
}

int cmd_barycenter(const GlobalOpts& g, const std::string& points_path,
                   const std::string& cost_path, double lambda, const std::string& direction) {
  std::ifstream in(points_path);
  if (!in) throw ParseError("cannot open " + points_path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("JSON parse error in " + points_path + ": " + e.what());
  }
  if (!j.contains("points") || !j["points"].is_array() || j["points"].size() < 2)
    throw ParseError(points_path + " must contain {\"points\": [[...], [...], ...]}");
  std::vector<ProbabilityVector> pts;
  for (const auto& arr : j["points"]) {
    Vector v(arr.size());
    for (size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    pts.push_back(ProbabilityVector::interior(std::move(v), g.renormalize));
  }
  const CostMatrix M{read_matrix_csv(cost_path)};
  BarycenterProblem prob{std::move(pts), M, lambda,
                         direction == "points-to-center"
                             ? BarycenterDirection::DFromPointsToCenter
                             : BarycenterDirection::DFromCenterToPoints};
  const BarycenterResult r = lambda_barycenter(prob, Tolerance(g.tol, g.max_iter, 1e-7));
  JsonWriter w;
  w.begin_object();
  w.key("barycenter").value(r.point.values());
  w.key("objective").value(r.objective);
  w.key("residual").value(r.residual);
  w.key("iterations").value(r.iterations);
  w.end_object();
  emit(g, w.str());
  return 0;
}

int cmd_boundary(const GlobalOpts& g, const std::string& p1_spec, const std::string& p2_spec,
                 double lambda, int grid, const std::string& cost_path) {
  const Vector v1 = parse_comma_list(p1_spec), v2 = parse_comma_list(p2_spec);
  const auto p1 = ProbabilityVector::interior(v1, g.renormalize);
  const auto p2 = ProbabilityVector::interior(v2, g.renormalize);
  CostMatrix M = [&]() {
    if (!cost_path.empty()) return CostMatrix(read_matrix_csv(cost_path));
    Matrix m = Matrix::Ones(p1.size(), p1.size());
    m.diagonal().setZero();
    return CostMatrix(std::move(m));
  }();
  const auto boundary = classifier_boundary_scan(M, p1, p2, lambda, grid, false, make_tol(g));
  std::string csv;
  for (Eigen::Index i = 0; i < p1.size(); ++i) csv += (i ? ",q" : "q") + std::to_string(i + 1);
  csv += ",gap\n";
  for (const auto& q : boundary) {
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      if (i) csv += ',';
      csv += format_double(q[i]);
    }
    csv += "," + format_double(boundary_gap(M, p1, p2, q, lambda, false, make_tol(g))) + "\n";
  }
  emit(g, csv);
  return 0;
}

int cmd_sweep(const GlobalOpts& g, const std::string& instance_path,
              const std::string& sweep_spec, const std::string& quantities_csv) {
  const Instance inst = load_instance(instance_path, g.renormalize);
  const SweepSpec sweep = parse_sweep(sweep_spec);
  std::vector<Quantity> quantities;
  std::stringstream ss(quantities_csv);
  std::string name;
  while (std::getline(ss, name, ',')) quantities.push_back(quantity_from_name(name));
  const auto rows = run_sweep(inst, sweep, quantities, make_tol(g));
  if (g.format == "csv") {
    emit(g, sweep_csv(rows, quantities));
  } else {
    JsonWriter w;
    w.begin_object();
    w.key("rows").begin_array();
    for (const auto& row : rows) {
      w.begin_object();
      w.key("lambda").value(row.lambda);
      for (const auto& [q, v] : row.values) w.key(quantity_name(q)).value(v);
      if (row.error) w.key("error").value(*row.error);
      w.end_object();
    }
    w.end_array();
    w.end_object();
    emit(g, w.str());
  }
  return 0;
}

int cmd_validate(const GlobalOpts& g, const std::string& instance_path, double lambda) {
  Instance inst = load_instance(instance_path, g.renormalize);
  inst.lambda = require_lambda(inst, lambda);
  const ValidationReport rep = validate_all(inst, make_tol(g));
  emit(g, validation_json(rep));
  return rep.ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entropy-relaxed optimal transport and its divergence geometry"};
  app.require_subcommand(1);
  // Global flags may appear after the subcommand name.
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--tol", g.tol, "L1 marginal tolerance for the solver");
  app.add_option("--max-iter", g.max_iter, "iteration cap for the solver");
  app.add_option("--gauge", g.gauge, "scaling gauge: sum-one | last-entry-one");
  app.add_flag("--renormalize", g.renormalize, "renormalize loaded distributions");
  app.add_option("--out", g.out, "output path (stdout when omitted)");
  app.add_option("--format", g.format, "output format for sweep: json | csv");

  std::string instance_path, sweep_spec = "1", ref = "source-p", check = "all";
  std::string p_spec, q_spec, points_path, cost_path, direction = "points-to-center";
  double lambda = 0.0;
  int grid = 20;

  auto* solve = app.add_subcommand("solve", "solve one entropy-relaxed instance");
  solve->add_option("--instance", instance_path)->required();
  solve->add_option("--lambda", lambda);

  auto* exact = app.add_subcommand("exact", "exact lambda = 0 transport LP");
  exact->add_option("--instance", instance_path)->required();

  auto* divergence = app.add_subcommand("divergence", "lambda-divergence sweep");
  divergence->add_option("--instance", instance_path)->required();
  divergence->add_option("--lambda-sweep", sweep_spec);
  divergence->add_option("--ref", ref);

  auto* geometry = app.add_subcommand("geometry", "identity checks on one instance");
  geometry->add_option("--instance", instance_path)->required();
  geometry->add_option("--check", check, "legendre | fisher | convexity | all");
  geometry->add_option("--lambda", lambda);

  auto* gaussian = app.add_subcommand("gaussian", "closed-form 1-D gaussian quantities");
  gaussian->add_option("--p", p_spec, "mean,variance")->required();
  gaussian->add_option("--q", q_spec, "mean,variance")->required();
  gaussian->add_option("--lambda", lambda)->required();

  auto* barycenter = app.add_subcommand("barycenter", "lambda-center of simplex points");
  barycenter->add_option("--points", points_path)->required();
  barycenter->add_option("--cost", cost_path)->required();
  barycenter->add_option("--lambda", lambda)->required();
  barycenter->add_option("--direction", direction, "points-to-center | center-to-points");

  auto* boundary = app.add_subcommand("boundary", "classifier boundary scan (n = 3)");
  boundary->add_option("--p1", p_spec)->required();
  boundary->add_option("--p2", q_spec)->required();
  boundary->add_option("--lambda", lambda)->required();
  boundary->add_option("--grid", grid);
  boundary->add_option("--cost", cost_path);

  auto* sweep = app.add_subcommand("sweep", "tabulate quantities over lambda");
  sweep->add_option("--instance", instance_path)->required();
  sweep->add_option("--lambda-sweep", sweep_spec)->required();
  std::string quantities = "C_lambda,D_lambda,KL";
  sweep->add_option("--quantities", quantities);

  auto* validate = app.add_subcommand("validate", "aggregate identity report");
  validate->add_option("--instance", instance_path)->required();
  validate->add_option("--lambda", lambda);

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) return cmd_solve(g, instance_path, lambda);
    if (exact->parsed()) return cmd_exact(g, instance_path);
    if (divergence->parsed()) return cmd_divergence(g, instance_path, sweep_spec, ref);
    if (geometry->parsed()) return cmd_geometry(g, instance_path, check, lambda);
    if (gaussian->parsed()) return cmd_gaussian(g, p_spec, q_spec, lambda);
    if (barycenter->parsed())
      return cmd_barycenter(g, points_path, cost_path, lambda, direction);
    if (boundary->parsed()) return cmd_boundary(g, p_spec, q_spec, lambda, grid, cost_path);
    if (sweep->parsed()) return cmd_sweep(g, instance_path, sweep_spec, quantities);
    if (validate->parsed()) return cmd_validate(g, instance_path, lambda);
  } catch (const otgeo::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 4;
  } catch (const otgeo::NonConvergence& e) {
    std::cerr << "non-convergence: " << e.what() << "\n";
    return 3;
  } catch (const otgeo::InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
