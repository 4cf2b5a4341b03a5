// End-to-end runs of the lqglm binary.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace lqglm;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kVaso = std::string(LQGLM_DATA_DIR) + "/vaso.csv";

struct Run {
  int status;
  std::string out;
  std::string err;
};

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("lqglm_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string write(const std::string& name, const std::string& text) {
  const fs::path p = scratch() / name;
  std::ofstream(p, std::ios::binary) << text;
  return p.string();
}

Run run(const std::string& args, const std::string& env = "") {
  const fs::path out = scratch() / "stdout";
  const fs::path err = scratch() / "stderr";
  const std::string cmd = env + " '" + LQGLM_CLI_PATH + "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

std::string vaso_args() { return "--data '" + kVaso + "' --log volume,rate"; }

Vector vec(const json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

}  // namespace

TEST_CASE("bundled data reproduces the ML row") {
  const Run r = run("fit " + vaso_args() + " --q 1.0");
  REQUIRE(r.status == 0);
  const json j = json::parse(r.out);
  CHECK(j["schema"] == "lq-glm/1");
  CHECK(j["converged"] == true);
  CHECK(j["q_used"] == 1.0);
  const Vector beta = vec(j["beta_q"]);
  const Vector se = vec(j["se"]);
  const double want_b[] = {-2.875, 5.179, 4.562};
  const double want_se[] = {1.321, 1.865, 1.838};
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(beta(k) - want_b[k]) <= 0.002);
    CHECK(std::abs(se(k) - want_se[k]) <= 0.005);
  }
  CHECK(j["weights"].size() == 39);
  for (const auto& w : j["weights"]) CHECK(w.get<double>() == doctest::Approx(1.0));
  // At q = 1 the AIC is the classical one.
  double loglik = 0.0;
  const ModelData d = datasets::vaso_model();
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double eta = d.x().row(i).dot(beta);
    loglik += d.y()(i) * eta - std::log1p(std::exp(eta));
  }
  CHECK(j["aic_q"].get<double>() == doctest::Approx(-2.0 * loglik + 6.0).epsilon(1e-9));
}

TEST_CASE("q = 0.79 under the reference protocol flags") {
  const Run r = run("fit " + vaso_args() +
                    " --q 0.79 --init adjusted --max-iter 25 --no-step-halving");
  const json j = json::parse(r.out);
  const Vector beta = vec(j["beta_q"]);
  const Vector se = vec(j["se"]);
  const double want_b[] = {-5.185, 8.234, 7.287};
  const double want_se[] = {2.563, 3.920, 3.455};
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(beta(k) - want_b[k]) <= 0.02);
    CHECK(std::abs(se(k) - want_se[k]) <= 0.05);
  }
  CHECK(j["beta_star"][1].get<double>() == doctest::Approx(beta(1) / 0.79));
}

TEST_CASE("exit status 2 on non-convergence, document still written") {
  const Run r = run("fit " + vaso_args() + " --q 0.79 --max-iter 1");
  CHECK(r.status == 2);
  const json j = json::parse(r.out);
  CHECK(j["converged"] == false);
  CHECK(j["iterations"] == 1);
}

TEST_CASE("input errors exit 1") {
  Run r = run("fit --data '" + write("empty.csv", "") + "'");
  CHECK(r.status == 1);
  CHECK(r.err.find("no rows") != std::string::npos);

  r = run("fit --data '" + write("header_only.csv", "x,y\n") + "'");
  CHECK(r.status == 1);
  CHECK(r.err.find("no rows") != std::string::npos);

  r = run("fit --data '" + write("bad.csv", "x,y\n1,0\nabc,1\n") + "'");
  CHECK(r.status == 1);
  CHECK(r.err.find("malformed CSV") != std::string::npos);

  r = run("fit --data '" + write("ragged.csv", "x,y\n1,0\n2\n") + "'");
  CHECK(r.status == 1);

  r = run("fit " + vaso_args() + " --family weibull");
  CHECK(r.status == 1);
  CHECK(r.err.find("weibull") != std::string::npos);

  r = run("fit " + vaso_args() + " --response missing");
  CHECK(r.status == 1);

  CHECK(run("fit " + vaso_args() + " --q 1.5").status == 1);
  CHECK(run("selectq " + vaso_args() + " --grid 0.7").status == 1);
  CHECK(run("residuals " + vaso_args() + " --type pearson").status == 1);
  CHECK(run("frobnicate").status == 1);
}

TEST_CASE("quoted CSV fields and CRLF") {
  const std::string text =
      "\"vol, ml\",rate,y\r\n3.70,0.825,1\r\n\"0.60\",0.75,0\r\n0.9,0.75,0\r\n1.25,2.5,1\r\n"
      "0.8,3.2,1\r\n0.55,2.75,0\r\n";
  const Run r = run("fit --data '" + write("quoted.csv", text) + "' --max-iter 5");
  REQUIRE(r.out.size() > 0);
  const json j = json::parse(r.out);
  CHECK(j["terms"][1] == "vol, ml");
  CHECK(j["n"] == 6);
}

TEST_CASE("selectq on the bundled data") {
  const Run r = run("selectq " + vaso_args() + " --grid 0.70:0.01");
  REQUIRE(r.status == 0);
  const json j = json::parse(r.out);
  CHECK(std::abs(j["q_opt"].get<double>() - 0.79) <= 0.02);
  CHECK(j["grid"][0]["q"] == 1.0);
  CHECK(j["rho"].get<double>() > 0.0);

  // --q auto fits at the selected value.
  const json fit = json::parse(run("fit " + vaso_args() + " --q auto").out);
  CHECK(fit["q_used"] == j["q_opt"]);
  CHECK(fit["selectq"]["q_opt"] == j["q_opt"]);
}

TEST_CASE("test: statistic 0 when h equals the estimate") {
  const json fit = json::parse(run("fit " + vaso_args()).out);
  char h[64];
  std::snprintf(h, sizeof h, "%.17g\n", fit["beta_q"][1].get<double>());
  const std::string hm = write("e1.csv", "0,1,0\n");
  const std::string hv = write("h.csv", h);
  const Run r = run("test " + vaso_args() + " --H '" + hm + "' --h '" + hv + "' --stat wald");
  REQUIRE(r.status == 0);
  const json j = json::parse(r.out);
  REQUIRE(j["tests"].size() == 1);
  CHECK(j["tests"][0]["stat"] == "wald");
  CHECK(j["tests"][0]["statistic"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(j["tests"][0]["p_value"].get<double>() == doctest::Approx(1.0));

  // All three statistics against the library, on a hypothesis with a header row.
  const std::string hm2 = write("e2.csv", "b0,b1,b2\n0,0,1\n");
  const std::string hv2 = write("zero.csv", "h\n0\n");
  const json all = json::parse(
      run("test " + vaso_args() + " --q 0.9 --H '" + hm2 + "' --h '" + hv2 + "'").out);
  REQUIRE(all["tests"].size() == 3);
  const ModelData d = datasets::vaso_model();
  FitControl c;
  c.q = 0.9;
  const FitResult f = fit_mlq(d, c);
  Matrix hmat = Matrix::Zero(1, 3);
  hmat(0, 2) = 1.0;
  const LinearHypothesis hyp(hmat, Vector::Zero(1));
  const FitResult con = fit_constrained(d, hyp, c);
  CHECK(all["tests"][0]["statistic"].get<double>() ==
        doctest::Approx(wald_test(f, hyp).statistic).epsilon(1e-12));
  CHECK(all["tests"][1]["statistic"].get<double>() ==
        doctest::Approx(score_test(con, d, hyp).statistic).epsilon(1e-12));
  CHECK(all["tests"][2]["statistic"].get<double>() ==
        doctest::Approx(bf_test(f, con, d, hyp).statistic).epsilon(1e-12));

  const std::string wide = write("wide.csv", "0,1\n");
  CHECK(run("test " + vaso_args() + " --H '" + wide + "' --h '" + hv + "'").status == 1);
}

TEST_CASE("residuals: CSV round trip and agreement with the library") {
  const fs::path csv = scratch() / "res.csv";
  REQUIRE(run("residuals " + vaso_args() + " --q 0.79 --format csv -o '" + csv.string() + "'")
              .status == 0);
  const json j = json::parse(run("residuals " + vaso_args() + " --q 0.79").out);

  const ModelData d = datasets::vaso_model();
  FitControl c;
  c.q = 0.79;
  const ResidualSet lib = standardized_residuals(d, fit_mlq(d, c));

  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "obs,residual,weight,flagged");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream s(line);
    std::string obs, value;
    std::getline(s, obs, ',');
    std::getline(s, value, ',');
    const double v = std::stod(value);
    const double from_json = j["values"][static_cast<std::size_t>(rows)].get<double>();
    CHECK(std::abs(v - from_json) <= 1e-12 * std::max(1.0, std::abs(v)));
    CHECK(std::abs(v - lib.values(rows)) <= 1e-12 * std::max(1.0, std::abs(v)));
    ++rows;
  }
  CHECK(rows == 39);

  // Quantile residuals are seeded.
  const std::string a = run("residuals " + vaso_args() + " --type quantile --seed 5").out;
  CHECK(a == run("residuals " + vaso_args() + " --type quantile --seed 5").out);
  CHECK(a != run("residuals " + vaso_args() + " --type quantile --seed 6").out);
  CHECK(a == run("residuals " + vaso_args() + " --type quantile", "LQGLM_SEED=5").out);
}

TEST_CASE("envelope: seeded and independent of --jobs") {
  const std::string base = "envelope " + vaso_args() + " --q 0.79 --reps 40 --seed 11";
  const Run one = run(base + " --jobs 1");
  const Run three = run(base + " --jobs 3");
  REQUIRE(one.status == 0);
  CHECK(one.out == three.out);
  const json j = json::parse(one.out);
  CHECK(j["obs"].size() == 39);
  const Vector lo = vec(j["lower"]);
  const Vector hi = vec(j["upper"]);
  CHECK((lo.array() <= hi.array()).all());
}

TEST_CASE("simulate: CSV columns, determinism across --jobs, JSON schema") {
  const std::string base = "simulate --n 100 --eps 0.05 --nu 5 --reps 40 --q-list 1.0,0.97";
  const Run a = run(base + " --seed 3 --jobs 1");
  const Run b = run(base + " --seed 3 --jobs 4");
  const Run env = run(base + " --jobs 2", "LQGLM_SEED=3");
  REQUIRE(a.status == 0);
  CHECK(a.out == b.out);
  CHECK(a.out == env.out);
  CHECK(a.out.rfind("n,eps,nu,q,bias,iqr,nonconverged\n", 0) == 0);
  CHECK(std::count(a.out.begin(), a.out.end(), '\n') == 3);

  const json j = json::parse(run(base + " --seed 3 --format json").out);
  CHECK(j["schema"] == "lq-glm/1");
  CHECK(j["cells"].size() == 2);
  CHECK(j["cells"][1]["q"] == 0.97);

  CHECK(run("simulate --q-list 1,x").status == 1);
  CHECK(run("simulate --eps 2").status == 1);
}
