#include "lqglm/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "lqglm/error.hpp"

namespace lqglm {

namespace {

constexpr double kThetaGuard = 700.0;
constexpr double kBetaGuard = 1e4;
constexpr double kPhiHalfWidth = 10.0;
constexpr int kMaxPhiRounds = 50;
constexpr double kMeritSlack = 1e-13;
constexpr double kExtendGain = 1e-10;
constexpr double kMaxStretch = 1024.0;

double norm_inf(const Vector& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

void check_q(double q) {
  if (!(q > 0.0 && q <= 1.0)) {
    throw UsageError("q must lie in (0, 1], got " + std::to_string(q));
  }
}

Vector thetas(const ModelData& data, const Vector& eta) {
  const Interval dom = data.family().theta_domain();
  Vector theta(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    theta(i) = data.link().k(eta(i));
    if (!dom.contains(theta(i))) {
      const double bound = theta(i) <= dom.lo ? dom.lo : dom.hi;
      throw DomainError("theta = " + std::to_string(theta(i)) + " at row " +
                            std::to_string(i) +
                            " is outside the natural parameter space",
                        static_cast<std::size_t>(i), bound);
    }
  }
  return theta;
}

Vector log_densities(const ModelData& data, const Vector& theta, double phi) {
  const Family& fam = data.family();
  Vector out(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double y = data.y()(i);
    out(i) = phi * (y * theta(i) - fam.b(theta(i))) + fam.c(y, phi);
  }
  return out;
}

double sum_lq(const Vector& log_f, double q) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < log_f.size(); ++i) {
    s += deformed_log_from_log(log_f(i), q);
  }
  return s;
}

double lq_at_eta(const ModelData& data, const Vector& eta, double q) {
  return sum_lq(log_densities(data, thetas(data, eta), data.phi()), q);
}

Vector psi_of(const ModelData& data, const Observations& obs) {
  const Vector r =
      (obs.u.array() * obs.kdot.array() * (data.y() - obs.mu).array()).matrix();
  return data.phi() * (data.x().transpose() * r);
}

Matrix weighted_cross(const Matrix& x, const Vector& d) {
  return x.transpose() * d.asDiagonal() * x;
}

Vector project(const ModelData& data, const Vector& eta) {
  const Vector target = eta - data.offset();
  const Matrix& x = data.x();
  return solve_spd(Matrix(x.transpose() * x), Vector(x.transpose() * target));
}

FitResult assemble(const ModelData& data, const Vector& beta_star, double q,
                   bool tolerate_singular) {
  const Observations obs = observe(data, beta_star, q);
  const double phi = data.phi();
  FitResult res;
  res.q = q;
  res.beta_star = beta_star;
  if (data.link().is_canonical()) res.beta_q = q * beta_star;
  res.eta_star = obs.eta;
  res.eta_q = calibrate(data.link(), obs.eta, q);
  res.mu_star = obs.mu;
  res.weights = obs.u;
  res.phi_hat = phi;
  res.psi_norm = norm_inf(psi_of(data, obs));
  res.lq_value = sum_lq(obs.log_f, q);

  const Family& fam = data.family();
  const Vector theta_q = q * obs.theta;
  Vector w0(obs.eta.size());
  res.mu.resize(obs.eta.size());
  for (Eigen::Index i = 0; i < obs.eta.size(); ++i) {
    const double kd = data.link().k_dot(res.eta_q(i));
    w0(i) = fam.b_ddot(theta_q(i)) * kd * kd;
    res.mu(i) = fam.b_dot(theta_q(i));
  }
  res.lq_calibrated = sum_lq(log_densities(data, theta_q, phi), q);
  res.fisher = phi * weighted_cross(data.x(), w0);

  res.a_n = phi / (2.0 - q) *
            weighted_cross(data.x(), (obs.w.array() * obs.j.array()).matrix());
  res.b_n = phi * weighted_cross(
                      data.x(),
                      (obs.w.array() * obs.j.array() * obs.gk.array()).matrix());
  try {
    const Cholesky chol(res.b_n);
    const Matrix half = chol.solve(res.a_n);
    const Matrix cov = chol.solve(Matrix(half.transpose()));
    res.cov = 0.5 * (cov + cov.transpose());
  } catch (const SingularityError&) {
    if (!tolerate_singular) throw;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    res.cov = Matrix::Constant(data.p(), data.p(), nan);
  }
  return res;
}

struct LoopOutcome {
  Vector beta;
  int iterations = 0;
  bool converged = false;
  bool near_indeterminate = false;
  std::string note;
  std::vector<double> trace;
};

LoopOutcome newton_scoring(const ModelData& data, const FitControl& control,
                           Vector beta) {
  const double q = control.q;
  LoopOutcome out;
  const double guard = kBetaGuard * std::max(1.0, norm_inf(beta));

  Observations obs = observe(data, beta, q);
  Vector psi = psi_of(data, obs);
  const double psi_tol = control.tol * (1.0 + norm_inf(psi));
  double lq = sum_lq(obs.log_f, q);
  out.trace.push_back(lq);

  for (int it = 0; it < control.max_iter; ++it) {
    const Matrix b_n = data.phi() * weighted_cross(
                           data.x(),
                           (obs.w.array() * obs.j.array() * obs.gk.array()).matrix());
    Vector step;
    try {
      step = solve_spd(b_n, psi);
    } catch (const SingularityError&) {
      if (it == 0) throw;
      // Weights collapsed along a diverging path.
      out.near_indeterminate = true;
      out.note =
          "weighted information became singular while coefficients grew; the "
          "data are close to separation (indeterminate estimate)";
      break;
    }
    Vector candidate = beta + step;

    if (control.step_halving_max > 0) {
      auto merit = [&](const Vector& b) {
        try {
          return lq_at_eta(data, data.linear_predictor(b), q);
        } catch (const DomainError&) {
          return -std::numeric_limits<double>::infinity();
        }
      };
      // Decreases at the level of rounding error count as no change.
      const double floor = lq - kMeritSlack * (1.0 + std::abs(lq));
      double lq_new = merit(candidate);
      int halvings = 0;
      while (!(lq_new >= floor) && halvings < control.step_halving_max) {
        step *= 0.5;
        candidate = beta + step;
        lq_new = merit(candidate);
        ++halvings;
      }
      if (!(lq_new >= floor)) {
        // No ascent along the scoring direction; stop where we are.
        out.converged = norm_inf(psi) <= psi_tol;
        if (!out.converged) out.note = "step halving failed to increase L_q";
        break;
      }
      if (halvings == 0 && lq_new - lq > kExtendGain * (1.0 + std::abs(lq))) {
        // B_n can overstate the curvature of L_q (heavily downweighted
        // points), which makes the scoring step short. Stretch it along the
        // same direction: to the vertex of the parabola through L(0), L'(0)
        // and L(1) when it is concave, by doubling otherwise.
        const double slope = psi.dot(step);
        const double curv = lq_new - lq - slope;
        if (curv < 0.0) {
          const double t = std::min(-slope / (2.0 * curv), kMaxStretch);
          if (t > 1.0) {
            const Vector longer = beta + t * step;
            const double lq_long = merit(longer);
            if (lq_long > lq_new) {
              candidate = longer;
              step *= t;
            }
          }
        } else {
          for (double t = 2.0; t <= kMaxStretch; t *= 2.0) {
            const Vector longer = beta + t * step;
            const double lq_long = merit(longer);
            if (!(lq_long > lq_new)) break;
            candidate = longer;
            lq_new = lq_long;
          }
          step = candidate - beta;
        }
      }
    }

    beta = candidate;
    ++out.iterations;

    const Vector eta = data.linear_predictor(beta);
    double max_theta = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      max_theta = std::max(max_theta, std::abs(data.link().k(eta(i))));
    }
    if (!(norm_inf(beta) <= guard) || !(max_theta <= kThetaGuard)) {
      out.near_indeterminate = true;
      out.note =
          "coefficients diverging; the data are close to separation "
          "(indeterminate estimate)";
      break;
    }

    obs = observe(data, beta, q);
    psi = psi_of(data, obs);
    lq = sum_lq(obs.log_f, q);
    out.trace.push_back(lq);

    if (norm_inf(step) <= control.tol * (1.0 + norm_inf(beta)) &&
        norm_inf(psi) <= psi_tol) {
      out.converged = true;
      break;
    }
  }
  out.beta = std::move(beta);
  if (!out.converged && out.note.empty()) {
    out.note = "iteration limit reached";
  }
  return out;
}

FitResult fit_fixed_phi(const ModelData& data, const FitControl& control) {
  Vector start;
  switch (control.init) {
    case Init::Explicit:
      if (control.start.size() != data.p()) {
        throw UsageError("explicit start has length " +
                         std::to_string(control.start.size()) + ", expected " +
                         std::to_string(data.p()));
      }
      start = control.start;
      break;
    case Init::AdjustedResponse:
      start = adjusted_response_start(data);
      break;
    case Init::MaximumLikelihood: {
      start = adjusted_response_start(data);
      if (control.q != 1.0) {
        FitControl ml = control;
        ml.q = 1.0;
        const LoopOutcome pre = newton_scoring(data, ml, start);
        // Surrogate image of the ML predictor: eta* = g(k(eta_ml) / q).
        const Vector eta_ml = data.linear_predictor(pre.beta);
        Vector eta_star(eta_ml.size());
        for (Eigen::Index i = 0; i < eta_ml.size(); ++i) {
          eta_star(i) = data.link().g(data.link().k(eta_ml(i)) / control.q);
        }
        start = project(data, eta_star);
      }
      break;
    }
  }

  LoopOutcome loop = newton_scoring(data, control, start);
  FitResult res = assemble(data, loop.beta, control.q, loop.near_indeterminate);
  res.iterations = loop.iterations;
  res.converged = loop.converged;
  res.near_indeterminate = loop.near_indeterminate;
  res.note = std::move(loop.note);
  res.trace = std::move(loop.trace);
  return res;
}

}  // namespace

ModelData::ModelData(Matrix x, Vector y, FamilyPtr family, LinkPtr link,
                     std::optional<double> phi, Vector offset)
    : x_(std::move(x)),
      y_(std::move(y)),
      family_(std::move(family)),
      link_(std::move(link)),
      offset_(std::move(offset)) {
  if (!family_ || !link_) throw UsageError("ModelData: family and link are required");
  const Eigen::Index n = x_.rows();
  const Eigen::Index p = x_.cols();
  if (p < 1) throw UsageError("ModelData: design matrix has no columns");
  if (n <= p) {
    throw UsageError("ModelData: need more rows than columns (n = " +
                     std::to_string(n) + ", p = " + std::to_string(p) + ")");
  }
  if (y_.size() != n) throw UsageError("ModelData: y length does not match X");
  if (offset_.size() == 0) offset_ = Vector::Zero(n);
  if (offset_.size() != n) throw UsageError("ModelData: offset length does not match X");
  if (!all_finite(x_)) throw DomainError("ModelData: X has non-finite entries");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!family_->in_support(y_(i))) {
      throw DomainError("ModelData: y = " + std::to_string(y_(i)) + " at row " +
                            std::to_string(i) + " is outside the support of " +
                            std::string(family_->name()),
                        static_cast<std::size_t>(i));
    }
  }
  try {
    Cholesky(Matrix(x_.transpose() * x_));
  } catch (const SingularityError& e) {
    throw SingularityError("ModelData: X is not of full column rank (column " +
                               std::to_string(e.pivot()) + ")",
                           e.pivot());
  }
  phi_ = phi.value_or(family_->phi_fixed().value_or(1.0));
  if (!(phi_ > 0.0) || !std::isfinite(phi_)) {
    throw DomainError("ModelData: phi must be finite and > 0");
  }
}

Vector ModelData::linear_predictor(const Vector& beta) const {
  if (beta.size() != p()) {
    throw UsageError("coefficient vector has length " + std::to_string(beta.size()) +
                     ", expected " + std::to_string(p()));
  }
  return x_ * beta + offset_;
}

ModelData ModelData::with_phi(double phi) const {
  return ModelData(x_, y_, family_, link_, phi, offset_);
}

Observations observe(const ModelData& data, const Vector& beta_star, double q) {
  check_q(q);
  const Family& fam = data.family();
  const ThetaLink& link = data.link();
  const double phi = data.phi();
  Observations o;
  o.eta = data.linear_predictor(beta_star);
  o.theta = thetas(data, o.eta);
  o.log_f = log_densities(data, o.theta, phi);
  const Eigen::Index n = o.eta.size();
  o.mu.resize(n);
  o.v.resize(n);
  o.kdot.resize(n);
  o.u.resize(n);
  o.w.resize(n);
  o.j.resize(n);
  o.gk.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double th = o.theta(i);
    o.mu(i) = fam.b_dot(th);
    o.v(i) = fam.b_ddot(th);
    o.kdot(i) = link.k_dot(o.eta(i));
    o.u(i) = std::exp((1.0 - q) * o.log_f(i));
    o.w(i) = o.v(i) * o.kdot(i) * o.kdot(i);
    try {
      o.j(i) = std::pow(jq(fam, th, q), -phi);
    } catch (const DomainError& e) {
      throw DomainError(std::string(e.what()) + " (row " + std::to_string(i) + ")",
                        static_cast<std::size_t>(i), e.bound());
    }
    if (link.is_canonical()) {
      o.gk(i) = 1.0;
    } else {
      const double eta_q = link.g(q * th);
      o.gk(i) = link.k_dot(eta_q) / o.kdot(i);
    }
  }
  return o;
}

Vector FitResult::standard_errors() const {
  return cov.diagonal().cwiseSqrt();
}

double lq_objective(const ModelData& data, const Vector& beta, double q) {
  check_q(q);
  return lq_at_eta(data, data.linear_predictor(beta), q);
}

Vector robust_weights(const ModelData& data, const Vector& beta, double q) {
  check_q(q);
  const Vector log_f =
      log_densities(data, thetas(data, data.linear_predictor(beta)), data.phi());
  return ((1.0 - q) * log_f.array()).exp().matrix();
}

Vector estimating_function(const ModelData& data, const Vector& beta, double q) {
  return psi_of(data, observe(data, beta, q));
}

SandwichParts matrices_ab(const ModelData& data, const Vector& beta, double q) {
  const Observations obs = observe(data, beta, q);
  const double phi = data.phi();
  SandwichParts out;
  out.a_n = phi / (2.0 - q) *
            weighted_cross(data.x(), (obs.w.array() * obs.j.array()).matrix());
  out.b_n = phi * weighted_cross(
                      data.x(),
                      (obs.w.array() * obs.j.array() * obs.gk.array()).matrix());
  return out;
}

FitResult fit_mlq(const ModelData& data, const FitControl& control) {
  check_q(control.q);
  if (!(control.tol > 0.0)) throw UsageError("FitControl: tol must be > 0");
  if (control.max_iter < 0 || control.step_halving_max < 0) {
    throw UsageError("FitControl: iteration counts must be >= 0");
  }
  if (!control.profile_phi || data.family().phi_fixed()) {
    return fit_fixed_phi(data, control);
  }

  // Alternate: beta given phi, then phi given the calibrated predictor.
  FitControl inner = control;
  ModelData current = data.with_phi(estimate_phi_eta(
      data, data.linear_predictor(adjusted_response_start(data)), 1.0));
  FitResult res;
  for (int round = 0; round < kMaxPhiRounds; ++round) {
    res = fit_fixed_phi(current, inner);
    const double phi_new = estimate_phi_eta(current, res.eta_q, control.q);
    const double change = std::abs(std::log(phi_new) - std::log(current.phi()));
    current = current.with_phi(phi_new);
    inner.init = Init::Explicit;
    inner.start = res.beta_star;
    if (change <= control.tol) {
      res = fit_fixed_phi(current, inner);
      return res;
    }
  }
  res.converged = false;
  res.note = "dispersion alternation did not settle";
  return res;
}

FitResult evaluate_at(const ModelData& data, const Vector& beta_star, double q) {
  check_q(q);
  FitResult res = assemble(data, beta_star, q, false);
  res.trace.push_back(res.lq_value);
  res.converged = true;
  return res;
}

Vector calibrate(const ThetaLink& link, const Vector& eta_star, double q) {
  check_q(q);
  if (link.is_canonical()) return q * eta_star;
  Vector out(eta_star.size());
  for (Eigen::Index i = 0; i < eta_star.size(); ++i) {
    out(i) = link.g(q * link.k(eta_star(i)));
    if (!std::isfinite(out(i))) {
      throw DomainError("calibrate: inverse link undefined at row " + std::to_string(i),
                        static_cast<std::size_t>(i));
    }
  }
  return out;
}

Vector calibrate_coefficients(const ThetaLink& link, const Vector& beta_star,
                              double q) {
  check_q(q);
  if (!link.is_canonical()) {
    throw UsageError(
        "calibrated coefficients exist for canonical links only; use the "
        "calibrated predictor instead");
  }
  return q * beta_star;
}

double estimate_phi(const ModelData& data, const Vector& beta, double q) {
  return estimate_phi_eta(data, data.linear_predictor(beta), q);
}

double estimate_phi_eta(const ModelData& data, const Vector& eta, double q) {
  check_q(q);
  if (data.family().phi_fixed()) {
    throw UsageError("estimate_phi: family " + std::string(data.family().name()) +
                     " has fixed dispersion");
  }
  const Vector theta = thetas(data, eta);
  double pearson = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double r = data.y()(i) - data.family().b_dot(theta(i));
    pearson += r * r / data.family().b_ddot(theta(i));
  }
  if (!(pearson > 0.0)) {
    throw BracketError(
        "estimate_phi: residuals are exactly zero, so phi is unbounded; "
        "expand the bracket or check the data");
  }
  const double centre = std::log(static_cast<double>(data.n()) / pearson);
  const double lo = centre - kPhiHalfWidth;
  const double hi = centre + kPhiHalfWidth;
  auto h = [&](double log_phi) {
    return sum_lq(log_densities(data, theta, std::exp(log_phi)), q);
  };
  const Maximum best = maximize_1d(h, lo, hi, 1e-10);
  const double edge = 1e-6 * (hi - lo);
  if (best.argmax - lo < edge || hi - best.argmax < edge) {
    throw BracketError("estimate_phi: maximum at the bracket edge (log phi = " +
                       std::to_string(best.argmax) + "); expand the bracket");
  }
  return std::exp(best.argmax);
}

Vector adjusted_response_start(const ModelData& data) {
  const Family& fam = data.family();
  Vector eta(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    eta(i) = data.link().g(fam.theta_of_mean(fam.initial_mean(data.y()(i))));
  }
  return project(data, eta);
}

}  // namespace lqglm
