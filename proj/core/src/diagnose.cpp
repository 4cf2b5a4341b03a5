#include "lqglm/diagnose.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "lqglm/error.hpp"
#include "parallel.hpp"

namespace lqglm {

namespace {

void require_canonical(const ModelData& data, const char* who) {
  if (!data.link().is_canonical()) {
    throw UsageError(std::string(who) +
                     ": hypotheses on coefficients need a canonical link");
  }
}

void check_hypothesis(const LinearHypothesis& hyp, Eigen::Index p) {
  if (hyp.h_matrix().cols() != p) {
    throw UsageError("hypothesis matrix has " + std::to_string(hyp.h_matrix().cols()) +
                     " columns, model has " + std::to_string(p) + " coefficients");
  }
}

// Quadratic form a' S^{-1} b with S = H C H'.
double form(const Matrix& h, const Matrix& c, const Vector& a, const Vector& b) {
  const Matrix s = h * c * h.transpose();
  return a.dot(solve_spd(Matrix(0.5 * (s + s.transpose())), b));
}

TestResult make_result(TestKind kind, double stat, int dof) {
  return {kind, stat, dof, chi_square_sf(std::max(stat, 0.0), dof)};
}

// Calibrated H beta_q - h.
Vector wald_gap(const FitResult& fit, const LinearHypothesis& hyp) {
  if (!fit.beta_q) {
    throw UsageError("test needs calibrated coefficients (canonical link)");
  }
  check_hypothesis(hyp, fit.beta_q->size());
  return hyp.h_matrix() * *fit.beta_q - hyp.h_vector();
}

// H B_n^{-1} Psi at the constrained fit.
Vector score_step(const FitResult& constrained, const ModelData& data,
                  const LinearHypothesis& hyp) {
  check_hypothesis(hyp, data.p());
  const Vector psi = estimating_function(data, constrained.beta_star, constrained.q);
  return hyp.h_matrix() * solve_spd(constrained.b_n, psi);
}

// Per-observation pieces shared by the added-variable score and t_i.
struct Leverage {
  Observations obs;
  Vector d;       // w j gk
  Vector e;       // w j
  Matrix c;       // (X' D X)^{-1}
};

Leverage leverage(const ModelData& data, const FitResult& fit) {
  Leverage lev{observe(data, fit.beta_star, fit.q), {}, {}, {}};
  lev.e = (lev.obs.w.array() * lev.obs.j.array()).matrix();
  lev.d = (lev.e.array() * lev.obs.gk.array()).matrix();
  const Matrix& x = data.x();
  lev.c = inverse_spd(Matrix(x.transpose() * lev.d.asDiagonal() * x));
  return lev;
}

Vector normal_scores(Eigen::Index n) {
  Vector out(n);
  const double nn = static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i) = normal_quantile((static_cast<double>(i) + 1.0 - 0.375) / (nn + 0.25));
  }
  return out;
}

double percentile(std::vector<double> v, double p) {
  // Linear interpolation between order statistics (type 7).
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Vector residuals_of(const ModelData& data, const FitResult& fit, ResidualType type,
                    RngStream& rng) {
  switch (type) {
    case ResidualType::Standardized:
      return standardized_residuals(data, fit).values;
    case ResidualType::Deviance:
      return deviance_residuals(data, fit);
    case ResidualType::Quantile:
      return quantile_residuals(data, fit, rng).values;
  }
  throw UsageError("unknown residual type");
}

}  // namespace

LinearHypothesis::LinearHypothesis(Matrix h_matrix, Vector h_vector)
    : h_(std::move(h_matrix)), rhs_(std::move(h_vector)) {
  if (h_.rows() < 1) throw UsageError("LinearHypothesis: H has no rows");
  if (rhs_.size() != h_.rows()) {
    throw UsageError("LinearHypothesis: h length does not match the rows of H");
  }
  if (h_.rows() > h_.cols()) {
    throw UsageError("LinearHypothesis: H has more rows than columns");
  }
  try {
    Cholesky(Matrix(h_ * h_.transpose()));
  } catch (const SingularityError& e) {
    throw SingularityError("LinearHypothesis: H is not of full row rank", e.pivot());
  }
}

std::string_view to_string(TestKind kind) {
  switch (kind) {
    case TestKind::Wald: return "wald";
    case TestKind::Score: return "score";
    case TestKind::Bilinear: return "bilinear";
    case TestKind::Deviance: return "deviance";
  }
  return "unknown";
}

double deviance_q(const ModelData& data, const FitResult& fit_null,
                  const FitResult& fit_alt) {
  if (fit_null.q != fit_alt.q) {
    throw UsageError("deviance_q: fits use different q");
  }
  if (fit_null.eta_q.size() != data.n() || fit_alt.eta_q.size() != data.n()) {
    throw UsageError("deviance_q: fits do not belong to this data set");
  }
  const double d = 2.0 * (fit_alt.lq_calibrated - fit_null.lq_calibrated);
  return std::max(d, 0.0);
}

double aic_q(const ModelData& data, const FitResult& fit) {
  if (fit.eta_q.size() != data.n()) {
    throw UsageError("aic_q: fit does not belong to this data set");
  }
  const Matrix ba = solve_spd(fit.b_n, fit.a_n);
  return -2.0 * fit.lq_calibrated + 2.0 * ba.trace();
}

FitResult fit_constrained(const ModelData& data, const LinearHypothesis& hyp,
                          const FitControl& control) {
  require_canonical(data, "fit_constrained");
  check_hypothesis(hyp, data.p());
  const Matrix& h = hyp.h_matrix();
  const Eigen::Index p = data.p();
  const Eigen::Index d = h.rows();
  const double q = control.q;

  // Particular solution on the surrogate scale: H beta0 = h / q.
  const Vector beta0 =
      h.transpose() * solve_spd(Matrix(h * h.transpose()), Vector(hyp.h_vector() / q));
  if (d == p) {
    FitResult res = evaluate_at(data, beta0, q);
    res.iterations = 0;
    return res;
  }
  Eigen::JacobiSVD<Matrix> svd(h, Eigen::ComputeFullV);
  const Matrix null_basis = svd.matrixV().rightCols(p - d);

  const ModelData reduced(data.x() * null_basis, data.y(), data.family_ptr(),
                          data.link_ptr(), data.phi(),
                          data.x() * beta0 + data.offset());
  FitControl inner = control;
  if (inner.init == Init::Explicit) {
    if (control.start.size() != p) {
      throw UsageError("fit_constrained: explicit start has the wrong length");
    }
    inner.start = null_basis.transpose() * (control.start - beta0);
  }
  const FitResult small = fit_mlq(reduced, inner);
  const Vector beta_star = beta0 + null_basis * small.beta_star;
  FitResult res = evaluate_at(data, beta_star, q);
  res.iterations = small.iterations;
  res.converged = small.converged;
  res.near_indeterminate = small.near_indeterminate;
  res.note = small.note;
  res.trace = small.trace;
  res.phi_hat = small.phi_hat;
  return res;
}

TestResult wald_test(const FitResult& fit, const LinearHypothesis& hyp) {
  const Vector gap = wald_gap(fit, hyp);
  return make_result(TestKind::Wald, form(hyp.h_matrix(), fit.cov, gap, gap),
                     hyp.dof());
}

TestResult score_test(const FitResult& constrained, const ModelData& data,
                      const LinearHypothesis& hyp) {
  require_canonical(data, "score_test");
  const Vector s = score_step(constrained, data, hyp);
  return make_result(TestKind::Score, form(hyp.h_matrix(), constrained.cov, s, s),
                     hyp.dof());
}

TestResult score_test(const ModelData& data, const LinearHypothesis& hyp,
                      const FitControl& control) {
  return score_test(fit_constrained(data, hyp, control), data, hyp);
}

TestResult bf_test(const FitResult& fit, const FitResult& constrained,
                   const ModelData& data, const LinearHypothesis& hyp) {
  require_canonical(data, "bf_test");
  if (fit.q != constrained.q) throw UsageError("bf_test: fits use different q");
  const Vector s = score_step(constrained, data, hyp);
  const Vector gap = wald_gap(fit, hyp);
  const double stat = form(hyp.h_matrix(), fit.cov, s, gap);
  return make_result(TestKind::Bilinear, std::max(stat, 0.0), hyp.dof());
}

TestResult bf_test(const ModelData& data, const FitResult& fit,
                   const LinearHypothesis& hyp, const FitControl& control) {
  FitControl c = control;
  c.q = fit.q;
  return bf_test(fit, fit_constrained(data, hyp, c), data, hyp);
}

TestResult added_variable_score(const ModelData& data, const FitResult& fit_null,
                                const Vector& z) {
  if (z.size() != data.n()) {
    throw UsageError("added_variable_score: z has the wrong length");
  }
  const Leverage lev = leverage(data, fit_null);
  const Matrix& x = data.x();
  const Vector v = z - x * (lev.c * (x.transpose() * (lev.d.asDiagonal() * z)));
  const double denom = v.dot(lev.e.asDiagonal() * v);
  const double scale = z.dot(lev.e.asDiagonal() * z);
  if (!(denom > 1e-12 * scale)) {
    throw DegenerateDirectionError(
        "added_variable_score: z lies in the column space of X");
  }
  const Observations& o = lev.obs;
  const double num =
      z.dot((o.u.array() * o.kdot.array() * (data.y() - o.mu).array()).matrix());
  const double q = fit_null.q;
  const double stat = (2.0 - q) * data.phi() * num * num / denom;
  return make_result(TestKind::Score, stat, 1);
}

ResidualSet standardized_residuals(const ModelData& data, const FitResult& fit) {
  const Leverage lev = leverage(data, fit);
  const Observations& o = lev.obs;
  const Matrix& x = data.x();
  const double q = fit.q;
  const Matrix middle = lev.c * (x.transpose() * lev.e.asDiagonal() * x) * lev.c;
  ResidualSet out{Vector(data.n()), std::vector<bool>(data.n(), false)};
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const Vector xi = x.row(i).transpose();
    const double m = lev.e(i) * xi.dot(lev.c * xi);
    const double m_star = lev.e(i) * xi.dot(middle * xi);
    const double gk = o.gk(i);
    const double s = 1.0 - 2.0 * gk * m + gk * gk * m_star;
    if (!(s > 0.0)) {
      out.values(i) = std::numeric_limits<double>::quiet_NaN();
      out.flagged[static_cast<std::size_t>(i)] = true;
      continue;
    }
    const double denom = std::sqrt(o.j(i) * o.v(i) * s / data.phi());
    out.values(i) = std::sqrt(2.0 - q) * o.u(i) * (data.y()(i) - o.mu(i)) / denom;
  }
  return out;
}

Vector deviance_residuals(const ModelData& data, const FitResult& fit) {
  const Family& fam = data.family();
  const double phi = data.phi();
  const double q = fit.q;
  Vector out(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double y = data.y()(i);
    const double theta = data.link().k(fit.eta_q(i));
    const double fitted = deformed_log_from_log(log_density(fam, y, theta, phi), q);
    const double sat = deformed_log_from_log(fam.saturated_log_density(y, phi), q);
    const double d = std::max(2.0 * (sat - fitted), 0.0);
    const double r = y - fit.mu(i);
    out(i) = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) * std::sqrt(d);
  }
  return out;
}

ResidualSet quantile_residuals(const ModelData& data, const FitResult& fit,
                               RngStream& rng) {
  ResidualSet out{Vector(data.n()), std::vector<bool>(data.n(), false)};
  const bool discrete = data.family().discrete();
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double u = discrete ? rng.uniform() : 0.5;
    const QuantileResidual r =
        quantile_residual_base(data.family(), data.y()(i), fit.mu(i), data.phi(), u);
    out.values(i) = r.value;
    out.flagged[static_cast<std::size_t>(i)] = r.clamped;
  }
  return out;
}

std::string_view to_string(ResidualType type) {
  switch (type) {
    case ResidualType::Standardized: return "standardized";
    case ResidualType::Deviance: return "deviance";
    case ResidualType::Quantile: return "quantile";
  }
  return "unknown";
}

ResidualType residual_type_from(std::string_view name) {
  if (name == "standardized") return ResidualType::Standardized;
  if (name == "deviance") return ResidualType::Deviance;
  if (name == "quantile") return ResidualType::Quantile;
  throw UsageError("unknown residual type '" + std::string(name) + "'");
}

Vector influence_fn(const ModelData& data, const FitResult& fit, double y_new,
                    const Vector& x_new) {
  if (x_new.size() != data.p()) {
    throw UsageError("influence_fn: x_new has the wrong length");
  }
  const Family& fam = data.family();
  const double eta = x_new.dot(fit.beta_star);
  const double theta = data.link().k(eta);
  const double log_f = log_density(fam, y_new, theta, data.phi());
  const double weight = std::exp((1.0 - fit.q) * log_f);
  const Vector score =
      data.phi() * data.link().k_dot(eta) * (y_new - fam.b_dot(theta)) * x_new;
  return solve_spd(fit.b_n, Vector(weight * score));
}

Envelope simulate_envelope(const ModelData& data, const FitResult& fit,
                           const FitControl& control, ResidualType type,
                           int replicates, std::uint64_t seed, int jobs) {
  if (replicates < 2) throw UsageError("simulate_envelope: need at least 2 replicates");
  const Eigen::Index n = data.n();
  const RngStream root(seed, 0);

  Envelope env;
  env.type = type;
  env.replicates = replicates;
  env.expected = normal_scores(n);

  RngStream own = root.child(0);
  const Vector obs_res = residuals_of(data, fit, type, own);
  env.order.resize(static_cast<std::size_t>(n));
  std::iota(env.order.begin(), env.order.end(), Eigen::Index{0});
  std::stable_sort(env.order.begin(), env.order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return obs_res(a) < obs_res(b); });
  env.observed.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    env.observed(k) = obs_res(env.order[static_cast<std::size_t>(k)]);
  }

  const Vector theta_q = fit.eta_q.unaryExpr([&](double e) { return data.link().k(e); });
  FitControl refit = control;
  refit.q = fit.q;
  std::vector<std::optional<Vector>> sims(static_cast<std::size_t>(replicates));
  detail::parallel_for(replicates, jobs, [&](int r) {
    RngStream rng = root.child(static_cast<std::uint64_t>(r) + 1);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      y(i) = data.family().sample(theta_q(i), data.phi(), rng);
    }
    try {
      const ModelData sim(data.x(), y, data.family_ptr(), data.link_ptr(),
                          data.phi(), data.offset());
      const FitResult f = fit_mlq(sim, refit);
      if (!f.converged) return;
      Vector res = residuals_of(sim, f, type, rng);
      if (!res.allFinite()) return;
      std::sort(res.data(), res.data() + res.size());
      sims[static_cast<std::size_t>(r)] = std::move(res);
    } catch (const Error&) {
      // Degenerate simulated sample (e.g. separation); skipped and counted.
    }
  });

  std::vector<const Vector*> ok;
  for (const auto& s : sims) {
    if (s) ok.push_back(&*s);
  }
  env.failed = replicates - static_cast<int>(ok.size());
  if (ok.size() < 2) {
    throw Error("simulate_envelope: fewer than two simulated refits succeeded");
  }
  env.lower.resize(n);
  env.median.resize(n);
  env.upper.resize(n);
  std::vector<double> column(ok.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    for (std::size_t r = 0; r < ok.size(); ++r) column[r] = (*ok[r])(k);
    env.lower(k) = percentile(column, 0.025);
    env.median(k) = percentile(column, 0.5);
    env.upper(k) = percentile(column, 0.975);
  }
  return env;
}

}  // namespace lqglm
