#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"

using namespace lqglm;

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Bernoulli log-likelihood written out directly.
double bernoulli_loglik(const ModelData& d, const Vector& beta) {
  const Vector eta = d.x() * beta;
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    s += d.y()(i) * eta(i) - std::log1p(std::exp(eta(i)));
  }
  return s;
}

FitControl reference_protocol(double q) {
  FitControl c;
  c.q = q;
  c.init = Init::AdjustedResponse;
  c.max_iter = 25;
  c.step_halving_max = 0;
  return c;
}

ModelData make_random_data(const FamilyPtr& fam, int n, int p, RngStream& rng, Vector* beta_out) {
  Matrix x(n, p);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (int j = 1; j < p; ++j) x(i, j) = rng.uniform() * 2.0 - 1.0;
  }
  Vector beta(p);
  for (int j = 0; j < p; ++j) beta(j) = 0.6 * rng.normal();
  Vector y(n);
  const double phi = fam->phi_fixed().value_or(2.0);
  for (int i = 0; i < n; ++i) y(i) = fam->sample(x.row(i).dot(beta), phi, rng);
  if (beta_out) *beta_out = beta;
  return ModelData(x, y, fam, canonical_link(), phi);
}

std::vector<Eigen::Index> ascending(const Vector& v) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v(a) < v(b); });
  return idx;
}

}  // namespace

TEST_CASE("ModelData validation") {
  Matrix x(3, 2);
  x << 1, 0, 1, 1, 1, 2;
  const Vector y = Vector::Ones(3);
  CHECK_NOTHROW(ModelData(x, y, poisson(), canonical_link()));
  CHECK_THROWS_AS(ModelData(x.topRows(2), y.head(2), poisson(), canonical_link()), UsageError);
  Matrix rank_def(3, 2);
  rank_def << 1, 2, 1, 2, 1, 2;
  CHECK_THROWS_AS(ModelData(rank_def, y, poisson(), canonical_link()), SingularityError);
  Vector bad = y;
  bad(2) = 0.5;
  try {
    ModelData(x, bad, poisson(), canonical_link());
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    REQUIRE(e.row().has_value());
    CHECK(*e.row() == 2);
  }
  CHECK_THROWS_AS(ModelData(x, y, gaussian(), canonical_link(), -1.0), DomainError);
}

TEST_CASE("lq_objective examples") {
  const ModelData d = datasets::vaso_model();
  const Vector beta = Vector::LinSpaced(3, -1.0, 1.0);
  CHECK(lq_objective(d, beta, 1.0) == doctest::Approx(bernoulli_loglik(d, beta)).epsilon(1e-13));

  // Two identical rows with theta = 0 and y = 1: each term is l_q(1/2).
  Matrix x = Matrix::Ones(2, 1);
  const ModelData one(x, Vector::Ones(2), bernoulli(), canonical_link());
  const double term = (std::sqrt(0.5) - 1.0) / 0.5;
  CHECK(lq_objective(one, Vector::Zero(1), 0.5) == doctest::Approx(2.0 * term).epsilon(1e-14));

  CHECK_THROWS_AS(lq_objective(d, beta, 0.0), UsageError);
  CHECK_THROWS_AS(lq_objective(d, beta, 1.2), UsageError);
}

TEST_CASE("Finney maximum likelihood against a derivative-free optimizer") {
  const ModelData d = datasets::vaso_model();
  FitControl c;
  const FitResult fit = fit_mlq(d, c);
  REQUIRE(fit.converged);
  const Vector nm = oracle::minimize([&](const Vector& b) { return -bernoulli_loglik(d, b); },
                                     Vector::Zero(3));
  CHECK((fit.beta_star - nm).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(fit.lq_value == doctest::Approx(bernoulli_loglik(d, nm)).epsilon(1e-10));
  const Vector irls = oracle::classical_irls(
      d.x(), d.y(), logistic, [](double e) { return logistic(e) * (1.0 - logistic(e)); },
      Vector::Zero(3));
  CHECK((fit.beta_star - irls).cwiseAbs().maxCoeff() < 1e-8);

  // Table 1 ML row.
  const Vector se = fit.standard_errors();
  const double beta_ref[] = {-2.875, 5.179, 4.562};
  const double se_ref[] = {1.321, 1.865, 1.838};
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(fit.beta_star(j) - beta_ref[j]) <= 0.002);
    CHECK(std::abs(se(j) - se_ref[j]) <= 0.005);
  }
  // SE oracle: inverse Fisher information via LU.
  Vector w(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double p = logistic(d.x().row(i).dot(irls));
    w(i) = p * (1 - p);
  }
  const Matrix info = d.x().transpose() * w.asDiagonal() * d.x();
  const Matrix inv = info.partialPivLu().inverse();
  CHECK((fit.cov - inv).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(fit.beta_q.has_value());
  CHECK((*fit.beta_q - fit.beta_star).norm() == 0.0);
}

TEST_CASE("Finney MLq under the reference protocol") {
  const ModelData d = datasets::vaso_model();
  struct Row {
    double q;
    double beta[3];
  };
  // q = 0.79 also carries sandwich standard errors.
  const Row rows[] = {{0.79, {-5.185, 8.234, 7.287}},
                      {0.80, {-4.636, 7.439, 6.601}}};
  for (const Row& r : rows) {
    const FitResult fit = fit_mlq(d, reference_protocol(r.q));
    REQUIRE(fit.beta_q.has_value());
    for (int j = 0; j < 3; ++j) {
      CHECK(std::abs((*fit.beta_q)(j) - r.beta[j]) <= 0.02);
    }
    CHECK((*fit.beta_q - r.q * fit.beta_star).norm() == 0.0);
  }
  const FitResult fit = fit_mlq(d, reference_protocol(0.79));
  const Vector se = fit.standard_errors();
  const double se_ref[] = {2.563, 3.920, 3.455};
  for (int j = 0; j < 3; ++j) CHECK(std::abs(se(j) - se_ref[j]) <= 0.05);
}

TEST_CASE("Finney MLq from the default warm start") {
  const ModelData d = datasets::vaso_model();
  FitControl c;
  c.q = 0.79;
  const FitResult fit = fit_mlq(d, c);
  REQUIRE(fit.converged);
  CHECK(fit.psi_norm <= 1e-6);
  // Solves the estimating equation: compare with a derivative-free maximum
  // of L_q over beta_star.
  const Vector nm = oracle::minimize([&](const Vector& b) { return -lq_objective(d, b, 0.79); },
                                     fit.beta_star, 0.5);
  CHECK((fit.beta_star - nm).cwiseAbs().maxCoeff() < 1e-4);
  // Objective ascent along the iterations (up to the rounding slack).
  for (std::size_t k = 1; k < fit.trace.size(); ++k) {
    CHECK(fit.trace[k] >= fit.trace[k - 1] - 1e-12 * (1.0 + std::abs(fit.trace[k - 1])));
  }
}

TEST_CASE("robust weights") {
  const ModelData d = datasets::vaso_model();
  const Vector beta = Vector::LinSpaced(3, -0.5, 0.5);
  CHECK((robust_weights(d, beta, 1.0).array() == 1.0).all());
  const Vector w = robust_weights(d, beta, 0.7);
  CHECK((w.array() > 0.0).all());
  CHECK((w.array() <= 1.0).all());
  const ModelData p = oracle::poisson_example();
  const Vector wp = robust_weights(p, Vector::Ones(3), 0.9);
  CHECK((wp.array() > 0.0).all());
  CHECK((wp.array() <= 1.0).all());

  // Cases 4 and 18 (1-based) carry the two smallest weights at q = 0.79 and
  // case 24 is next.
  FitControl c;
  c.q = 0.79;
  const FitResult fit = fit_mlq(d, c);
  const auto order = ascending(fit.weights);
  const std::vector<Eigen::Index> two{order[0], order[1]};
  CHECK(std::find(two.begin(), two.end(), 3) != two.end());
  CHECK(std::find(two.begin(), two.end(), 17) != two.end());
  CHECK(order[2] == 23);
}

TEST_CASE("estimating function") {
  const ModelData d = datasets::vaso_model();
  const Vector beta = Vector::LinSpaced(3, -1.0, 2.0);
  const Vector mu = (d.x() * beta).unaryExpr([](double e) { return logistic(e); });
  CHECK((estimating_function(d, beta, 1.0) - d.x().transpose() * (d.y() - mu))
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  // Gaussian with y = b'(theta) exactly.
  RngStream rng(5, 0);
  Matrix x(12, 2);
  for (int i = 0; i < 12; ++i) x(i, 0) = 1.0, x(i, 1) = rng.normal();
  const Vector bg = Vector::LinSpaced(2, 0.3, -0.7);
  const ModelData g(x, x * bg, gaussian(), canonical_link(), 2.0);
  CHECK(estimating_function(g, bg, 0.8).cwiseAbs().maxCoeff() < 1e-12);

  // Poisson n = 10, p = 2, q = 0.9 against central differences.
  RngStream prng(10, 2);
  const ModelData p = make_random_data(poisson(), 10, 2, prng, nullptr);
  const Vector b0 = Vector::LinSpaced(2, 0.2, 0.4);
  const Vector fd = oracle::central_gradient([&](const Vector& b) { return lq_objective(p, b, 0.9); },
                                             b0);
  const Vector psi = estimating_function(p, b0, 0.9);
  CHECK((psi - fd).norm() <= 1e-6 * psi.norm());
}

TEST_CASE("gradient consistency over random triples") {
  for (const auto& fam : {bernoulli(), poisson(), gaussian()}) {
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      RngStream rng(500 + k, 1);
      Vector truth;
      const ModelData d = make_random_data(fam, 30, 3, rng, &truth);
      const double q = 0.6 + 0.4 * rng.uniform();
      const Vector beta = truth + 0.2 * Vector::Ones(3);
      const Vector psi = estimating_function(d, beta, q);
      const Vector fd = oracle::central_gradient(
          [&](const Vector& b) { return lq_objective(d, b, q); }, beta, 1e-6);
      worst = std::max(worst, (psi - fd).norm() / std::max(1e-3, psi.norm()));
    }
    CAPTURE(fam->name());
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("A_n and B_n") {
  const ModelData d = datasets::vaso_model();
  const Vector beta = Vector::LinSpaced(3, -1.0, 2.0);
  const SandwichParts one = matrices_ab(d, beta, 1.0);
  Vector w(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double p = logistic(d.x().row(i).dot(beta));
    w(i) = p * (1 - p);
  }
  const Matrix info = d.x().transpose() * w.asDiagonal() * d.x();
  CHECK((one.a_n - info).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((one.b_n - info).cwiseAbs().maxCoeff() < 1e-12);

  // Canonical link: B^{-1} A B^{-1} = (XWJX)^{-1} / (phi (2 - q)).
  const double q = 0.8;
  const SandwichParts ab = matrices_ab(d, beta, q);
  Vector wj(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double t = d.x().row(i).dot(beta);
    const double b = std::log1p(std::exp(t));
    const double bq = std::log1p(std::exp(q * t));
    wj(i) = w(i) * std::exp(q * b - bq);
  }
  const Matrix xwjx = d.x().transpose() * wj.asDiagonal() * d.x();
  const Matrix binv = ab.b_n.partialPivLu().inverse();
  const Matrix sandwich = binv * ab.a_n * binv;
  const Matrix closed = xwjx.partialPivLu().inverse() / (2.0 - q);
  CHECK((sandwich - closed).cwiseAbs().maxCoeff() < 1e-9 * closed.cwiseAbs().maxCoeff());
}

TEST_CASE("calibration") {
  Vector bs(2);
  bs << 2.0, -4.0;
  const Vector bq = calibrate_coefficients(*canonical_link(), bs, 0.5);
  CHECK(bq(0) == 1.0);
  CHECK(bq(1) == -2.0);
  CHECK((calibrate(*canonical_link(), bs, 1.0) - bs).norm() == 0.0);
  CHECK_THROWS_AS(calibrate_coefficients(*probit_link(), bs, 0.5), UsageError);

  const CustomLink cubic(
      "cubic", [](double e) { return e * e * e; }, [](double e) { return 3 * e * e; },
      [](double e) { return 6 * e; }, [](double t) { return std::cbrt(t); },
      [](double t) { return 1.0 / (3.0 * std::cbrt(t) * std::cbrt(t)); });
  const Vector eta = Vector::Constant(1, 2.0);
  CHECK(calibrate(cubic, eta, 0.5)(0) == doctest::Approx(std::cbrt(4.0)).epsilon(1e-15));
  CHECK((calibrate(cubic, eta, 1.0) - eta).norm() < 1e-15);
}

TEST_CASE("probit theta-link") {
  const ModelData base = datasets::vaso_model();
  const ModelData d(base.x(), base.y(), bernoulli(), probit_link());
  const FitResult ml = fit_mlq(d, FitControl{});
  REQUIRE(ml.converged);
  auto probit_loglik = [&](const Vector& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      const double p = oracle::normal_cdf(d.x().row(i).dot(b));
      s += d.y()(i) ? std::log(p) : std::log1p(-p);
    }
    return s;
  };
  const Vector nm = oracle::minimize([&](const Vector& b) { return -probit_loglik(b); },
                                     Vector::Zero(3));
  CHECK((ml.beta_star - nm).cwiseAbs().maxCoeff() < 1e-5);
  CHECK_FALSE(ml.beta_q.has_value());

  FitControl c;
  c.q = 0.9;
  const FitResult fit = fit_mlq(d, c);
  REQUIRE(fit.converged);
  const Vector fd = oracle::central_gradient(
      [&](const Vector& b) { return lq_objective(d, b, 0.9); }, fit.beta_star);
  CHECK(fd.cwiseAbs().maxCoeff() < 1e-5);
  // Calibrated predictor.
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double th = probit_link()->k(fit.eta_star(i));
    CHECK(fit.eta_q(i) == doctest::Approx(probit_link()->g(0.9 * th)).epsilon(1e-12));
  }
  // GK = k'(eta_q) / k'(eta*) at the surrogate.
  const Observations obs = observe(d, fit.beta_star, 0.9);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double expect = probit_link()->k_dot(fit.eta_q(i)) / probit_link()->k_dot(fit.eta_star(i));
    CHECK(obs.gk(i) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("q to 1 continuity") {
  for (const ModelData& d : {datasets::vaso_model(), oracle::poisson_example()}) {
    FitControl one;
    FitControl near;
    near.q = 0.9999;
    const FitResult a = fit_mlq(d, one);
    const FitResult b = fit_mlq(d, near);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    CHECK((*a.beta_q - *b.beta_q).cwiseAbs().maxCoeff() <= 1e-3);
  }
}

TEST_CASE("convergence contract and non-convergence") {
  const ModelData d = oracle::poisson_example();
  FitControl c;
  c.q = 0.9;
  const FitResult fit = fit_mlq(d, c);
  REQUIRE(fit.converged);
  const Vector psi0 = estimating_function(d, fit_mlq(d, FitControl{}).beta_star / 0.9, 0.9);
  CHECK(fit.psi_norm <= c.tol * (1.0 + psi0.cwiseAbs().maxCoeff()));
  CHECK((fit.cov - fit.cov.transpose()).norm() == 0.0);
  CHECK(symmetric_eigenvalues(fit.cov)(0) > 0.0);

  FitControl short_run = c;
  short_run.max_iter = 1;
  short_run.init = Init::AdjustedResponse;
  const FitResult stopped = fit_mlq(d, short_run);
  CHECK_FALSE(stopped.converged);
  CHECK(stopped.iterations == 1);
  CHECK_FALSE(stopped.note.empty());

  FitControl bad;
  bad.init = Init::Explicit;
  bad.start = Vector::Zero(2);
  CHECK_THROWS_AS(fit_mlq(d, bad), UsageError);
}

TEST_CASE("separated data are flagged as indeterminate") {
  Matrix x(8, 2);
  Vector y(8);
  for (int i = 0; i < 8; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i - 3.5;
    y(i) = i < 4 ? 0.0 : 1.0;
  }
  const ModelData d(x, y, bernoulli(), canonical_link());
  const FitResult fit = fit_mlq(d, FitControl{});
  CHECK_FALSE(fit.converged);
  CHECK(fit.near_indeterminate);
}

TEST_CASE("dispersion estimate") {
  RngStream rng(31, 0);
  const int n = 20;
  Matrix x(n, 2);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.uniform();
    y(i) = 0.5 + 1.5 * x(i, 1) + 0.4 * rng.normal();
  }
  const ModelData d(x, y, gaussian(), canonical_link());
  const Vector ols = x.colPivHouseholderQr().solve(y);
  const double rss = (y - x * ols).squaredNorm();
  CHECK(estimate_phi(d, ols, 1.0) == doctest::Approx(n / rss).epsilon(1e-8));

  // q = 0.9 against a grid scan of H_n(phi) on log phi.
  const double q = 0.9;
  auto h = [&](double lphi) {
    const double phi = std::exp(lphi);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = y(i) - x.row(i).dot(ols);
      s += std::expm1((1 - q) * (-0.5 * phi * r * r + 0.5 * std::log(phi / (2 * M_PI)))) / (1 - q);
    }
    return s;
  };
  double best = -10.0;
  for (int i = 0; i <= 20000; ++i) {
    const double v = -10.0 + 20.0 * i / 20000.0;
    if (h(v) > h(best)) best = v;
  }
  double fine = best;
  for (int i = 0; i <= 1000000; ++i) {
    const double v = best - 1e-3 + 2e-3 * i / 1000000.0;
    if (h(v) > h(fine)) fine = v;
  }
  CHECK(std::abs(std::log(estimate_phi(d, ols, q)) - fine) <= 1e-6);

  const ModelData exact(x, x * ols, gaussian(), canonical_link());
  CHECK_THROWS_AS(estimate_phi(exact, ols, 1.0), BracketError);
  CHECK_THROWS_AS(estimate_phi(oracle::poisson_example(), Vector::Ones(3), 1.0), UsageError);

  FitControl c;
  c.profile_phi = true;
  const FitResult prof = fit_mlq(d, c);
  REQUIRE(prof.converged);
  CHECK((prof.beta_star - ols).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(prof.phi_hat == doctest::Approx(n / rss).epsilon(1e-7));
}
