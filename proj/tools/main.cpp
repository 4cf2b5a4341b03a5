// lqglm: command-line front end.
//
//   lqglm fit       --data F [--response y] [--family f] [--q x|auto]
//   lqglm selectq   --data F [--grid lo:step] [--method stability|efficiency]
//   lqglm test      --data F --H H.csv --h h.csv [--stat wald|score|bf|all]
//   lqglm residuals --data F [--type standardized|deviance|quantile]
//   lqglm envelope  --data F [--type ...] [--reps 100]
//   lqglm simulate  --n 400 --eps 0.05 --nu 5 --reps 1000 --q-list 1,0.97
//
// Exit status: 0 success, 1 input or usage error, 2 fit did not converge
// (the document is still written).

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <lqglm/lqglm.hpp>

#include "csv.hpp"

using json = nlohmann::ordered_json;
using namespace lqglm;
using cli::InputError;

namespace {

constexpr const char* kSchema = "lq-glm/1";
constexpr int kExitInput = 1;
constexpr int kExitNonconverged = 2;

struct ModelOpts {
  std::string data;
  std::string response = "y";
  std::string family = "bernoulli";
  std::string link = "canonical";
  std::vector<std::string> log_cols;
  bool no_intercept = false;
  double phi = 0.0;  // 0: family default
};

struct FitOpts {
  std::string q = "1";
  std::string init = "ml";
  int max_iter = 100;
  double tol = 1e-8;
  bool no_step_halving = false;
  bool profile_phi = false;
};

struct GridOpts {
  std::string grid = "0.70:0.01";
  double rho_factor = 0.05;
  std::string method = "stability";
};

struct OutOpts {
  std::string output;
  std::string format = "json";
  std::uint64_t seed = 1;
  int jobs = 1;
};

struct Model {
  ModelData data;
  std::vector<std::string> terms;
};

Model load_model(const ModelOpts& o) {
  if (o.data.empty()) throw InputError("--data is required");
  const cli::Table t = cli::read_table(o.data);
  const std::size_t ycol = t.column(o.response);
  for (const auto& name : o.log_cols) t.column(name);

  std::vector<std::string> terms;
  std::vector<Vector> cols;
  if (!o.no_intercept) {
    terms.push_back("(Intercept)");
    cols.push_back(Vector::Ones(static_cast<Eigen::Index>(t.rows.size())));
  }
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (j == ycol) continue;
    Vector v = t.numeric(j);
    const std::string& name = t.header[j];
    if (std::find(o.log_cols.begin(), o.log_cols.end(), name) != o.log_cols.end()) {
      if (!(v.minCoeff() > 0.0)) throw InputError("--log " + name + ": values must be > 0");
      v = v.array().log().matrix();
      terms.push_back("log(" + name + ")");
    } else {
      terms.push_back(name);
    }
    cols.push_back(std::move(v));
  }
  if (cols.empty()) throw InputError("no covariates");
  Matrix x(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = cols[j];

  FamilyPtr family = make_family(o.family);
  LinkPtr link = make_link(o.link, *family);
  std::optional<double> phi;
  if (o.phi > 0.0) phi = o.phi;
  return {ModelData(std::move(x), t.numeric(ycol), std::move(family), std::move(link), phi),
          std::move(terms)};
}

FitControl make_control(const FitOpts& o) {
  FitControl c;
  c.max_iter = o.max_iter;
  c.tol = o.tol;
  if (o.init == "ml") {
    c.init = Init::MaximumLikelihood;
  } else if (o.init == "adjusted") {
    c.init = Init::AdjustedResponse;
  } else {
    throw InputError("--init must be ml or adjusted");
  }
  if (o.no_step_halving) c.step_halving_max = 0;
  c.profile_phi = o.profile_phi;
  return c;
}

QGrid make_grid(const GridOpts& o) {
  const auto colon = o.grid.find(':');
  double lo, step;
  if (colon == std::string::npos || !cli::parse_double(o.grid.substr(0, colon), lo) ||
      !cli::parse_double(o.grid.substr(colon + 1), step)) {
    throw InputError("--grid must look like lo:step, e.g. 0.70:0.01");
  }
  return QGrid(lo, step, o.rho_factor);
}

QSelectResult run_selectq(const Model& m, const GridOpts& g, const FitControl& c) {
  if (g.method == "stability") return select_q_stability(m.data, make_grid(g), c);
  if (g.method == "efficiency") return select_q_efficiency(m.data, make_grid(g), c);
  throw InputError("--method must be stability or efficiency");
}

json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    a.push_back(std::isfinite(v(i)) ? json(v(i)) : json(nullptr));
  }
  return a;
}

json to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

json selectq_json(const QSelectResult& r) {
  json grid = json::array();
  for (std::size_t j = 0; j < r.fits.size(); ++j) {
    const QFit& f = r.fits[j];
    json e{{"q", f.q},
           {"coef", to_json(f.coef)},
           {"sandwich_trace", f.sandwich_trace},
           {"are", f.are}};
    e["qv"] = j < r.qv_profile.size() ? json(r.qv_profile[j]) : json(nullptr);
    grid.push_back(std::move(e));
  }
  return {{"method", r.method == QMethod::Stability ? "stability" : "efficiency"},
          {"q_opt", r.q_opt},
          {"rho", r.rho},
          {"grid", std::move(grid)},
          {"pruned", r.pruned},
          {"warnings", r.warnings}};
}

// Resolves --q (a number or "auto") and fits.
struct Fitted {
  FitResult fit;
  std::optional<QSelectResult> selection;
};

Fitted fit_at(const Model& m, const FitOpts& fo, const GridOpts& go) {
  FitControl c = make_control(fo);
  Fitted out;
  if (fo.q == "auto") {
    out.selection = run_selectq(m, go, c);
    c.q = out.selection->q_opt;
  } else if (!cli::parse_double(fo.q, c.q) || !(c.q > 0.0 && c.q <= 1.0)) {
    throw InputError("--q must be a number in (0, 1] or auto");
  }
  out.fit = fit_mlq(m.data, c);
  return out;
}

json fit_json(const Model& m, const Fitted& f) {
  const FitResult& r = f.fit;
  json j{{"schema", kSchema},
         {"command", "fit"},
         {"family", m.data.family().name()},
         {"link", m.data.link().name()},
         {"n", m.data.n()},
         {"terms", m.terms},
         {"q_used", r.q},
         {"converged", r.converged},
         {"iterations", r.iterations},
         {"near_indeterminate", r.near_indeterminate}};
  if (!r.note.empty()) j["note"] = r.note;
  j["beta_q"] = r.beta_q ? to_json(*r.beta_q) : json(nullptr);
  j["beta_star"] = to_json(r.beta_star);
  j["se"] = to_json(r.standard_errors());
  j["cov"] = to_json(r.cov);
  j["weights"] = to_json(r.weights);
  j["lq_value"] = r.lq_value;
  j["aic_q"] = aic_q(m.data, r);
  j["phi"] = r.phi_hat;
  j["psi_norm"] = r.psi_norm;
  if (f.selection) j["selectq"] = selectq_json(*f.selection);
  return j;
}

std::string fmt17(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void emit(const OutOpts& o, const std::string& text) {
  if (o.output.empty() || o.output == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(o.output, std::ios::binary);
  if (!out) throw InputError("cannot write " + o.output);
  out << text;
}

void emit(const OutOpts& o, const json& j) { emit(o, j.dump(2) + "\n"); }

void check_format(const OutOpts& o) {
  if (o.format != "json" && o.format != "csv") throw InputError("--format must be json or csv");
}

int cmd_fit(const ModelOpts& mo, const FitOpts& fo, const GridOpts& go, const OutOpts& oo) {
  check_format(oo);
  const Model m = load_model(mo);
  const Fitted f = fit_at(m, fo, go);
  if (oo.format == "json") {
    emit(oo, fit_json(m, f));
  } else {
    std::ostringstream s;
    s << "term,beta_q,beta_star,se\n";
    const Vector se = f.fit.standard_errors();
    for (std::size_t j = 0; j < m.terms.size(); ++j) {
      const auto k = static_cast<Eigen::Index>(j);
      s << m.terms[j] << ',' << (f.fit.beta_q ? fmt17((*f.fit.beta_q)(k)) : "NA") << ','
        << fmt17(f.fit.beta_star(k)) << ',' << fmt17(se(k)) << '\n';
    }
    emit(oo, s.str());
  }
  return f.fit.converged ? 0 : kExitNonconverged;
}

int cmd_selectq(const ModelOpts& mo, const FitOpts& fo, const GridOpts& go, const OutOpts& oo) {
  check_format(oo);
  const Model m = load_model(mo);
  const QSelectResult r = run_selectq(m, go, make_control(fo));
  if (oo.format == "json") {
    json j{{"schema", kSchema}, {"command", "selectq"}};
    j.update(selectq_json(r));
    emit(oo, j);
  } else {
    std::ostringstream s;
    s << "q,qv,sandwich_trace,are\n";
    for (std::size_t j = 0; j < r.fits.size(); ++j) {
      s << fmt17(r.fits[j].q) << ','
        << (j < r.qv_profile.size() ? fmt17(r.qv_profile[j]) : "NA") << ','
        << fmt17(r.fits[j].sandwich_trace) << ',' << fmt17(r.fits[j].are) << '\n';
    }
    emit(oo, s.str());
  }
  for (const auto& w : r.warnings) std::cerr << "lqglm: " << w << '\n';
  return 0;
}

int cmd_test(const ModelOpts& mo, const FitOpts& fo, const GridOpts& go, const OutOpts& oo,
             const std::string& h_path, const std::string& rhs_path, const std::string& stat) {
  if (h_path.empty() || rhs_path.empty()) throw InputError("test needs --H and --h");
  if (stat != "wald" && stat != "score" && stat != "bf" && stat != "all") {
    throw InputError("--stat must be wald, score, bf or all");
  }
  check_format(oo);
  const Model m = load_model(mo);
  const Matrix h = cli::read_matrix(h_path);
  Matrix rhs = cli::read_matrix(rhs_path);
  if (rhs.rows() == 1 && rhs.cols() > 1) rhs.transposeInPlace();
  if (rhs.cols() != 1 || rhs.rows() != h.rows()) {
    throw InputError("--h must hold one value per row of --H");
  }
  if (h.cols() != m.data.p()) {
    throw InputError("--H has " + std::to_string(h.cols()) + " columns, the model has " +
                     std::to_string(m.data.p()) + " coefficients");
  }
  const LinearHypothesis hyp(h, rhs.col(0));
  const Fitted f = fit_at(m, fo, go);
  FitControl c = make_control(fo);
  c.q = f.fit.q;
  std::vector<TestResult> results;
  bool converged = f.fit.converged;
  if (stat == "wald" || stat == "all") results.push_back(wald_test(f.fit, hyp));
  if (stat != "wald") {
    const FitResult con = fit_constrained(m.data, hyp, c);
    converged = converged && con.converged;
    if (stat == "score" || stat == "all") results.push_back(score_test(con, m.data, hyp));
    if (stat == "bf" || stat == "all") results.push_back(bf_test(f.fit, con, m.data, hyp));
  }
  if (oo.format == "json") {
    json tests = json::array();
    for (const TestResult& t : results) {
      tests.push_back({{"stat", to_string(t.kind)},
                       {"statistic", t.statistic},
                       {"dof", t.dof},
                       {"p_value", t.p_value}});
    }
    emit(oo, json{{"schema", kSchema},
                  {"command", "test"},
                  {"q_used", f.fit.q},
                  {"converged", converged},
                  {"beta_q", f.fit.beta_q ? to_json(*f.fit.beta_q) : json(nullptr)},
                  {"tests", std::move(tests)}});
  } else {
    std::ostringstream s;
    s << "stat,statistic,dof,p_value\n";
    for (const TestResult& t : results) {
      s << to_string(t.kind) << ',' << fmt17(t.statistic) << ',' << t.dof << ','
        << fmt17(t.p_value) << '\n';
    }
    emit(oo, s.str());
  }
  return converged ? 0 : kExitNonconverged;
}

ResidualType parse_type(const std::string& s) {
  try {
    return residual_type_from(s);
  } catch (const Error&) {
    throw InputError("--type must be standardized, deviance or quantile");
  }
}

int cmd_residuals(const ModelOpts& mo, const FitOpts& fo, const GridOpts& go, const OutOpts& oo,
                  const std::string& type_name) {
  check_format(oo);
  const ResidualType type = parse_type(type_name);
  const Model m = load_model(mo);
  const Fitted f = fit_at(m, fo, go);
  ResidualSet r;
  if (type == ResidualType::Standardized) {
    r = standardized_residuals(m.data, f.fit);
  } else if (type == ResidualType::Deviance) {
    r.values = deviance_residuals(m.data, f.fit);
    r.flagged.assign(static_cast<std::size_t>(m.data.n()), false);
  } else {
    RngStream rng(oo.seed, 0);
    r = quantile_residuals(m.data, f.fit, rng);
  }
  if (oo.format == "json") {
    emit(oo, json{{"schema", kSchema},
                  {"command", "residuals"},
                  {"type", to_string(type)},
                  {"q_used", f.fit.q},
                  {"converged", f.fit.converged},
                  {"values", to_json(r.values)},
                  {"weights", to_json(f.fit.weights)},
                  {"flagged", r.flagged}});
  } else {
    std::ostringstream s;
    s << "obs,residual,weight,flagged\n";
    for (Eigen::Index i = 0; i < r.values.size(); ++i) {
      s << i + 1 << ',' << fmt17(r.values(i)) << ',' << fmt17(f.fit.weights(i)) << ','
        << (r.flagged[static_cast<std::size_t>(i)] ? 1 : 0) << '\n';
    }
    emit(oo, s.str());
  }
  return f.fit.converged ? 0 : kExitNonconverged;
}

int cmd_envelope(const ModelOpts& mo, const FitOpts& fo, const GridOpts& go, const OutOpts& oo,
                 const std::string& type_name, int reps) {
  check_format(oo);
  if (reps < 1) throw InputError("--reps must be >= 1");
  const ResidualType type = parse_type(type_name);
  const Model m = load_model(mo);
  const Fitted f = fit_at(m, fo, go);
  FitControl c = make_control(fo);
  c.q = f.fit.q;
  const Envelope e = simulate_envelope(m.data, f.fit, c, type, reps, oo.seed, oo.jobs);
  std::vector<Eigen::Index> obs;
  for (Eigen::Index i : e.order) obs.push_back(i + 1);
  if (oo.format == "json") {
    emit(oo, json{{"schema", kSchema},
                  {"command", "envelope"},
                  {"type", to_string(type)},
                  {"q_used", f.fit.q},
                  {"replicates", e.replicates},
                  {"failed", e.failed},
                  {"obs", obs},
                  {"expected", to_json(e.expected)},
                  {"observed", to_json(e.observed)},
                  {"lower", to_json(e.lower)},
                  {"median", to_json(e.median)},
                  {"upper", to_json(e.upper)}});
  } else {
    std::ostringstream s;
    s << "obs,expected,observed,lower,median,upper\n";
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      s << obs[k] << ',' << fmt17(e.expected(i)) << ',' << fmt17(e.observed(i)) << ','
        << fmt17(e.lower(i)) << ',' << fmt17(e.median(i)) << ',' << fmt17(e.upper(i)) << '\n';
    }
    emit(oo, s.str());
  }
  if (e.failed > 0) std::cerr << "lqglm: " << e.failed << " envelope refits failed\n";
  return f.fit.converged ? 0 : kExitNonconverged;
}

int cmd_simulate(SimDesign d, const std::string& q_list, const std::string& beta,
                 const FitOpts& fo, const OutOpts& oo) {
  check_format(oo);
  auto numbers = [](const std::string& s, const char* flag) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      double v;
      if (!cli::parse_double(item, v)) throw InputError(std::string(flag) + ": bad value '" + item + "'");
      out.push_back(v);
    }
    if (out.empty()) throw InputError(std::string(flag) + " is empty");
    return out;
  };
  d.q_list = numbers(q_list, "--q-list");
  if (!beta.empty()) {
    const auto b = numbers(beta, "--beta");
    d.beta_true = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
  }
  d.control = make_control(fo);
  d.seed = oo.seed;
  const SimReport r = run_study(d, oo.jobs);
  if (oo.format == "csv") {
    std::ostringstream s;
    write_csv(r, s, true);
    emit(oo, s.str());
  } else {
    json cells = json::array();
    for (const SimCell& c : r.cells) {
      cells.push_back({{"estimator", c.estimator},
                       {"q", std::isfinite(c.q) ? json(c.q) : json(nullptr)},
                       {"bias", c.bias},
                       {"iqr", c.iqr},
                       {"nonconverged", c.nonconverged},
                       {"used", c.used},
                       {"mean_estimate", to_json(c.mean_estimate)},
                       {"unreliable", c.unreliable}});
    }
    emit(oo, json{{"schema", kSchema},
                  {"command", "simulate"},
                  {"n", d.n},
                  {"eps", d.eps},
                  {"nu", d.nu},
                  {"reps", d.reps},
                  {"seed", d.seed},
                  {"beta_true", to_json(d.beta_true)},
                  {"intercept", d.intercept},
                  {"fixed_x", d.fixed_x},
                  {"cells", std::move(cells)}});
  }
  if (r.unreliable()) std::cerr << "lqglm: more than 10% of replicates failed in some cell\n";
  return 0;
}

void add_model(CLI::App* app, ModelOpts& o) {
  app->add_option("--data", o.data, "CSV file with a header row")->required();
  app->add_option("--response", o.response, "response column")->capture_default_str();
  app->add_option("--family", o.family, "bernoulli, poisson or gaussian")->capture_default_str();
  app->add_option("--link", o.link, "canonical or probit")->capture_default_str();
  app->add_option("--log", o.log_cols, "columns to log-transform")->delimiter(',');
  app->add_flag("--no-intercept", o.no_intercept, "do not prepend a column of ones");
  app->add_option("--phi", o.phi, "fixed dispersion (precision) for the gaussian family");
}

void add_fit(CLI::App* app, FitOpts& o, bool with_q = true) {
  if (with_q) app->add_option("--q", o.q, "distortion in (0, 1] or auto")->capture_default_str();
  app->add_option("--init", o.init, "ml or adjusted")->capture_default_str();
  app->add_option("--max-iter", o.max_iter)->capture_default_str();
  app->add_option("--tol", o.tol)->capture_default_str();
  app->add_flag("--no-step-halving", o.no_step_halving);
  app->add_flag("--profile-phi", o.profile_phi, "estimate the gaussian dispersion");
}

void add_grid(CLI::App* app, GridOpts& o) {
  app->add_option("--grid", o.grid, "lo:step")->capture_default_str();
  app->add_option("--rho-factor", o.rho_factor)->capture_default_str();
  app->add_option("--method", o.method, "stability or efficiency")->capture_default_str();
}

void add_out(CLI::App* app, OutOpts& o, bool seeded) {
  app->add_option("-o,--output", o.output, "output path (default stdout)");
  app->add_option("--format", o.format, "json or csv")->capture_default_str();
  if (seeded) {
    app->add_option("--seed", o.seed)->envname("LQGLM_SEED")->capture_default_str();
    app->add_option("--jobs", o.jobs)->check(CLI::PositiveNumber)->capture_default_str();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust GLM fitting by maximum Lq-likelihood"};
  app.require_subcommand(1);

  ModelOpts mo;
  FitOpts fo;
  GridOpts go;
  OutOpts oo;

  auto* fit = app.add_subcommand("fit", "fit at a given q (or q chosen by selectq)");
  add_model(fit, mo);
  add_fit(fit, fo);
  add_grid(fit, go);
  add_out(fit, oo, false);

  auto* sel = app.add_subcommand("selectq", "choose q on a decreasing grid");
  add_model(sel, mo);
  add_fit(sel, fo, false);
  add_grid(sel, go);
  add_out(sel, oo, false);

  std::string h_path, rhs_path, stat = "all";
  auto* test = app.add_subcommand("test", "Wald, score and bilinear-form tests of H beta = h");
  add_model(test, mo);
  add_fit(test, fo);
  add_grid(test, go);
  add_out(test, oo, false);
  test->set_help_flag("--help", "Print this help message and exit");
  test->add_option("--H", h_path, "CSV with the rows of H")->required();
  test->add_option("--h", rhs_path, "CSV with h")->required();
  test->add_option("--stat", stat, "wald, score, bf or all")->capture_default_str();

  std::string type = "standardized";
  auto* res = app.add_subcommand("residuals", "per-observation residuals");
  add_model(res, mo);
  add_fit(res, fo);
  add_grid(res, go);
  add_out(res, oo, true);
  res->add_option("--type", type, "standardized, deviance or quantile")->capture_default_str();

  int env_reps = 100;
  auto* env = app.add_subcommand("envelope", "simulated QQ envelope of the residuals");
  add_model(env, mo);
  add_fit(env, fo);
  add_grid(env, go);
  add_out(env, oo, true);
  env->add_option("--type", type, "standardized, deviance or quantile")->capture_default_str();
  env->add_option("--reps", env_reps)->capture_default_str();

  SimDesign design;
  std::string q_list = "1";
  std::string beta;
  auto* sim = app.add_subcommand("simulate", "contamination study for Poisson regression");
  sim->add_option("--n", design.n)->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--eps", design.eps)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  sim->add_option("--nu", design.nu)->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--reps", design.reps)->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--q-list", q_list, "comma-separated q values")->capture_default_str();
  sim->add_option("--beta", beta, "true coefficients, comma-separated (default 1,1,1)");
  sim->add_flag("--intercept", design.intercept, "prepend an intercept column");
  sim->add_flag("--fixed-x", design.fixed_x, "draw covariates once");
  add_fit(sim, fo, false);
  add_out(sim, oo, true);
  oo.format = "csv";
  sim->preparse_callback([&](std::size_t) { oo.format = "csv"; });
  for (auto* sub : {fit, sel, test, res, env}) {
    sub->preparse_callback([&](std::size_t) { oo.format = "json"; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*fit) return cmd_fit(mo, fo, go, oo);
    if (*sel) return cmd_selectq(mo, fo, go, oo);
    if (*test) return cmd_test(mo, fo, go, oo, h_path, rhs_path, stat);
    if (*res) return cmd_residuals(mo, fo, go, oo, type);
    if (*env) return cmd_envelope(mo, fo, go, oo, type, env_reps);
    if (*sim) return cmd_simulate(design, q_list, beta, fo, oo);
  } catch (const InputError& e) {
    std::cerr << "lqglm: " << e.what() << '\n';
    return kExitInput;
  } catch (const Error& e) {
    std::cerr << "lqglm: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
