#include "lqglm/expfam.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "lqglm/error.hpp"

namespace lqglm {

namespace {

constexpr double kQOneTol = 1e-12;
constexpr double kCdfTail = 1e-15;
constexpr double kResidualClamp = 1e-12;

bool is_integer(double y) { return std::isfinite(y) && y == std::floor(y); }

double log1pexp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class Bernoulli final : public Family {
 public:
  std::string_view name() const override { return "bernoulli"; }
  double b(double theta) const override { return log1pexp(theta); }
  double b_dot(double theta) const override { return logistic(theta); }
  double b_ddot(double theta) const override {
    return logistic(theta) * logistic(-theta);
  }
  double c(double, double) const override { return 0.0; }
  double theta_of_mean(double mu) const override {
    if (!(mu > 0.0 && mu < 1.0)) {
      throw DomainError("bernoulli: mean must lie in (0, 1)");
    }
    return std::log(mu) - std::log1p(-mu);
  }
  double cdf(double y, double mu, double) const override {
    if (y < 0.0) return 0.0;
    if (y < 1.0) return 1.0 - mu;
    return 1.0;
  }
  double cdf_below(double y, double mu, double phi) const override {
    return cdf(std::ceil(y) - 1.0, mu, phi);
  }
  bool discrete() const override { return true; }
  bool in_support(double y) const override { return y == 0.0 || y == 1.0; }
  std::optional<double> phi_fixed() const override { return 1.0; }
  double saturated_log_density(double, double) const override { return 0.0; }
  double initial_mean(double y) const override { return (y + 0.5) / 2.0; }
  double sample(double theta, double, RngStream& rng) const override {
    return rng.bernoulli(logistic(theta)) ? 1.0 : 0.0;
  }
};

class Poisson final : public Family {
 public:
  std::string_view name() const override { return "poisson"; }
  double b(double theta) const override { return std::exp(theta); }
  double b_dot(double theta) const override { return std::exp(theta); }
  double b_ddot(double theta) const override { return std::exp(theta); }
  double c(double y, double) const override { return -std::lgamma(y + 1.0); }
  double theta_of_mean(double mu) const override {
    if (!(mu > 0.0)) throw DomainError("poisson: mean must be positive");
    return std::log(mu);
  }
  double cdf(double y, double mu, double) const override {
    if (y < 0.0) return 0.0;
    const double top = std::floor(y);
    // Terms in log space so a large mean cannot underflow exp(-mu). Stop once
    // past the mode and the terms are negligible.
    const double lmu = std::log(mu);
    double total = 0.0;
    for (double k = 0.0; k <= top; k += 1.0) {
      const double term = std::exp(k * lmu - mu - std::lgamma(k + 1.0));
      total += term;
      if (k > mu && term < kCdfTail * total) break;
    }
    return std::min(total, 1.0);
  }
  double cdf_below(double y, double mu, double phi) const override {
    return cdf(std::ceil(y) - 1.0, mu, phi);
  }
  bool discrete() const override { return true; }
  bool in_support(double y) const override { return y >= 0.0 && is_integer(y); }
  std::optional<double> phi_fixed() const override { return 1.0; }
  double saturated_log_density(double y, double) const override {
    if (y == 0.0) return 0.0;
    return y * std::log(y) - y - std::lgamma(y + 1.0);
  }
  double initial_mean(double y) const override { return y + 0.1; }
  double sample(double theta, double, RngStream& rng) const override {
    return static_cast<double>(rng.poisson(std::exp(theta)));
  }
};

class Gaussian final : public Family {
 public:
  std::string_view name() const override { return "gaussian"; }
  double b(double theta) const override { return 0.5 * theta * theta; }
  double b_dot(double theta) const override { return theta; }
  double b_ddot(double) const override { return 1.0; }
  double c(double y, double phi) const override {
    return -0.5 * phi * y * y + 0.5 * std::log(phi / (2.0 * std::numbers::pi));
  }
  double theta_of_mean(double mu) const override { return mu; }
  double cdf(double y, double mu, double phi) const override {
    return normal_cdf(std::sqrt(phi) * (y - mu));
  }
  bool discrete() const override { return false; }
  bool in_support(double y) const override { return std::isfinite(y); }
  double saturated_log_density(double, double phi) const override {
    return 0.5 * std::log(phi / (2.0 * std::numbers::pi));
  }
  double initial_mean(double y) const override { return y; }
  double sample(double theta, double phi, RngStream& rng) const override {
    return theta + rng.normal() / std::sqrt(phi);
  }
};

class Canonical final : public ThetaLink {
 public:
  std::string_view name() const override { return "canonical"; }
  double k(double eta) const override { return eta; }
  double k_dot(double) const override { return 1.0; }
  double k_ddot(double) const override { return 0.0; }
  double g(double theta) const override { return theta; }
  double g_dot(double) const override { return 1.0; }
  bool is_canonical() const override { return true; }
};

// theta = log Phi(eta) - log Phi(-eta). The Mills-type ratios
// phi(eta)/Phi(eta) and phi(eta)/Phi(-eta) are formed in log space.
class Probit final : public ThetaLink {
 public:
  std::string_view name() const override { return "probit"; }
  double k(double eta) const override {
    return log_cdf(eta) - log_cdf(-eta);
  }
  double k_dot(double eta) const override {
    return ratio(eta) + ratio(-eta);
  }
  double k_ddot(double eta) const override {
    const double m = ratio(eta);
    const double n = ratio(-eta);
    return -m * (eta + m) + n * (n - eta);
  }
  double g(double theta) const override {
    // Quantile of the logistic probability, taken on the short tail.
    return theta > 0.0 ? -normal_quantile(logistic(-theta))
                       : normal_quantile(logistic(theta));
  }
  double g_dot(double theta) const override { return 1.0 / k_dot(g(theta)); }

 private:
  static double log_cdf(double x) {
    return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  }
  static double ratio(double x) {
    const double log_pdf = -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi);
    return std::exp(log_pdf - log_cdf(x));
  }
};

void check_theta(const Family& family, double theta, const char* who) {
  const Interval dom = family.theta_domain();
  if (!dom.contains(theta)) {
    const double bound = theta <= dom.lo ? dom.lo : dom.hi;
    throw DomainError(std::string(who) + ": theta = " + std::to_string(theta) +
                          " lies outside the natural parameter space of " +
                          std::string(family.name()),
                      std::nullopt, bound);
  }
}

void check_y(const Family& family, double y, const char* who) {
  if (!family.in_support(y)) {
    throw DomainError(std::string(who) + ": y = " + std::to_string(y) +
                      " is outside the support of " + std::string(family.name()));
  }
}

void check_phi(double phi, const char* who) {
  if (!(phi > 0.0) || !std::isfinite(phi)) {
    throw DomainError(std::string(who) + ": phi must be finite and > 0");
  }
}

// Sum h(y) * kernel(y) over y = 0, 1, 2, ... until the kernel is past its
// peak and negligible.
double sum_discrete(const Family& family, const std::function<double(double)>& log_kernel,
                    const std::function<double(double)>& h) {
  double total = 0.0;
  double mass = 0.0;
  double prev = -std::numeric_limits<double>::infinity();
  for (double y = 0.0; y < 1e7; y += 1.0) {
    if (!family.in_support(y)) {
      if (y > 1.0) break;
      continue;
    }
    const double lk = log_kernel(y);
    const double kv = std::exp(lk);
    mass += kv;
    total += h(y) * kv;
    if (lk < prev && kv <= 1e-18 * mass) break;
    prev = lk;
  }
  return total;
}

}  // namespace

double Family::cdf_below(double y, double mu, double phi) const {
  return cdf(y, mu, phi);
}

FamilyPtr bernoulli() {
  static const FamilyPtr instance = std::make_shared<Bernoulli>();
  return instance;
}

FamilyPtr poisson() {
  static const FamilyPtr instance = std::make_shared<Poisson>();
  return instance;
}

FamilyPtr gaussian() {
  static const FamilyPtr instance = std::make_shared<Gaussian>();
  return instance;
}

FamilyPtr make_family(std::string_view name) {
  if (name == "bernoulli" || name == "binomial") return bernoulli();
  if (name == "poisson") return poisson();
  if (name == "gaussian" || name == "normal") return gaussian();
  throw UsageError("unknown family '" + std::string(name) + "'");
}

LinkPtr canonical_link() {
  static const LinkPtr instance = std::make_shared<Canonical>();
  return instance;
}

LinkPtr probit_link() {
  static const LinkPtr instance = std::make_shared<Probit>();
  return instance;
}

LinkPtr make_link(std::string_view name, const Family& family) {
  const std::string_view fam = family.name();
  if (name == "canonical" || (name == "logit" && fam == "bernoulli") ||
      (name == "log" && fam == "poisson") ||
      (name == "identity" && fam == "gaussian")) {
    return canonical_link();
  }
  if (name == "probit") {
    if (fam != "bernoulli") {
      throw UsageError("probit link requires the bernoulli family");
    }
    return probit_link();
  }
  throw UsageError("unknown link '" + std::string(name) + "' for family " +
                   std::string(fam));
}

CustomLink::CustomLink(std::string name, Fn k, Fn k_dot, Fn k_ddot, Fn g, Fn g_dot)
    : name_(std::move(name)),
      k_(std::move(k)),
      k_dot_(std::move(k_dot)),
      k_ddot_(std::move(k_ddot)),
      g_(std::move(g)),
      g_dot_(std::move(g_dot)) {
  if (!k_ || !k_dot_ || !k_ddot_ || !g_ || !g_dot_) {
    throw UsageError("CustomLink: every callable must be set");
  }
}

double deformed_log(double u, double q) {
  if (!(u > 0.0)) throw DomainError("deformed_log: u must be > 0");
  if (!(q > 0.0)) throw DomainError("deformed_log: q must be > 0");
  return deformed_log_from_log(std::log(u), q);
}

double deformed_log_from_log(double log_u, double q) {
  if (!(q > 0.0)) throw DomainError("deformed_log: q must be > 0");
  if (std::abs(q - 1.0) < kQOneTol) return log_u;
  return std::expm1((1.0 - q) * log_u) / (1.0 - q);
}

double log_density(const Family& family, double y, double theta, double phi) {
  check_theta(family, theta, "log_density");
  check_y(family, y, "log_density");
  check_phi(phi, "log_density");
  return phi * (y * theta - family.b(theta)) + family.c(y, phi);
}

double jq(const Family& family, double theta, double q) {
  if (!(q > 0.0)) throw DomainError("jq: q must be > 0");
  check_theta(family, theta, "jq");
  if (q == 1.0) return 1.0;
  check_theta(family, q * theta, "jq (q * theta)");
  return std::exp(-q * family.b(theta) + family.b(q * theta));
}

double escort_log_density(const Family& family, double y, double theta,
                          double phi, double q, double r) {
  check_theta(family, theta, "escort_log_density");
  check_y(family, y, "escort_log_density");
  check_phi(phi, "escort_log_density");
  if (!(r >= 0.0)) throw DomainError("escort_log_density: r must be >= 0");
  const double a = r * (1.0 - q) + q;
  const double s = r * (1.0 - q) + 1.0;
  return phi * a * (y * theta - family.b(theta)) + s * family.c(y, phi);
}

double escort_integral(const Family& family, double theta, double phi,
                       double q, double r,
                       const std::function<double(double)>& h) {
  auto log_kernel = [&](double y) {
    return escort_log_density(family, y, theta, phi, q, r);
  };
  if (family.discrete()) return sum_discrete(family, log_kernel, h);

  // Continuous case; only the Gaussian kernel is shipped, whose exponent is
  // a quadratic in y with precision s * phi and centre a * theta / s.
  const double a = r * (1.0 - q) + q;
  const double s = r * (1.0 - q) + 1.0;
  const double centre = a * theta / s;
  const double width = 40.0 / std::sqrt(s * phi);
  auto integrand = [&](double y) { return h(y) * std::exp(log_kernel(y)); };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      integrand, centre - width, centre + width, 15, 1e-13);
}

double escort_mass(const Family& family, double theta, double phi, double q,
                   double r) {
  return escort_integral(family, theta, phi, q, r, [](double) { return 1.0; });
}

QuantileResidual quantile_residual_base(const Family& family, double y,
                                        double mu, double phi,
                                        double uniform_draw) {
  check_y(family, y, "quantile_residual_base");
  double p = family.cdf(y, mu, phi);
  if (family.discrete()) {
    if (!(uniform_draw >= 0.0 && uniform_draw <= 1.0)) {
      throw DomainError("quantile_residual_base: uniform draw must lie in [0, 1]");
    }
    const double lo = family.cdf_below(y, mu, phi);
    p = lo + uniform_draw * (p - lo);
  }
  bool clamped = false;
  if (p < kResidualClamp) {
    p = kResidualClamp;
    clamped = true;
  } else if (p > 1.0 - kResidualClamp) {
    p = 1.0 - kResidualClamp;
    clamped = true;
  }
  return {normal_quantile(p), clamped};
}

}  // namespace lqglm
