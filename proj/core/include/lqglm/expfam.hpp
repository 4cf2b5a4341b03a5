#pragma once

// Exponential-family building blocks. A family is written in the form
//
//   f(y; theta, phi) = exp[phi {y theta - b(theta)} + c(y, phi)]
//
// and the linear predictor eta reaches the natural parameter through a
// theta-link, theta = k(eta), with inverse g = k^{-1}.

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "lqglm/numerics.hpp"

namespace lqglm {

// Open interval (lo, hi); either end may be infinite.
struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  bool contains(double x) const { return x > lo && x < hi; }
  static Interval real_line() { return {}; }
};

class Family {
 public:
  virtual ~Family() = default;

  virtual std::string_view name() const = 0;

  virtual double b(double theta) const = 0;
  // Mean function, mu = b'(theta).
  virtual double b_dot(double theta) const = 0;
  // Variance function, V = b''(theta).
  virtual double b_ddot(double theta) const = 0;
  virtual double c(double y, double phi) const = 0;
  // Inverse of the mean function.
  virtual double theta_of_mean(double mu) const = 0;

  virtual double cdf(double y, double mu, double phi) const = 0;
  // Left limit F(y-); equals cdf for continuous families.
  virtual double cdf_below(double y, double mu, double phi) const;

  virtual bool discrete() const = 0;
  virtual bool in_support(double y) const = 0;
  virtual Interval theta_domain() const { return Interval::real_line(); }
  // Dispersion value when it is not a free parameter.
  virtual std::optional<double> phi_fixed() const { return std::nullopt; }

  // Log density at the saturated mean mu = y.
  virtual double saturated_log_density(double y, double phi) const = 0;
  // Starting mean for the classical IRLS start (adjusted response).
  virtual double initial_mean(double y) const = 0;
  virtual double sample(double theta, double phi, RngStream& rng) const = 0;
};

using FamilyPtr = std::shared_ptr<const Family>;

// Bernoulli: b(theta) = log(1 + e^theta), phi = 1.
FamilyPtr bernoulli();
// Poisson: b(theta) = e^theta, c(y) = -log y!, phi = 1.
FamilyPtr poisson();
// Gaussian: b(theta) = theta^2 / 2, phi is the inverse variance.
FamilyPtr gaussian();
// Looks up "bernoulli" / "binomial", "poisson", "gaussian" / "normal".
FamilyPtr make_family(std::string_view name);

class ThetaLink {
 public:
  virtual ~ThetaLink() = default;

  virtual std::string_view name() const = 0;
  virtual double k(double eta) const = 0;
  virtual double k_dot(double eta) const = 0;
  virtual double k_ddot(double eta) const = 0;
  virtual double g(double theta) const = 0;
  virtual double g_dot(double theta) const = 0;
  virtual bool is_canonical() const { return false; }
};

using LinkPtr = std::shared_ptr<const ThetaLink>;

// k(eta) = eta.
LinkPtr canonical_link();
// Probit mean link for binary data written as a theta-link:
// k(eta) = logit(Phi(eta)).
LinkPtr probit_link();
// Looks up "canonical" (aliases: logit for Bernoulli, log for Poisson,
// identity for Gaussian) and "probit".
LinkPtr make_link(std::string_view name, const Family& family);

// Link assembled from user callables; used for non-canonical experiments.
class CustomLink final : public ThetaLink {
 public:
  using Fn = std::function<double(double)>;

  CustomLink(std::string name, Fn k, Fn k_dot, Fn k_ddot, Fn g, Fn g_dot);

  std::string_view name() const override { return name_; }
  double k(double eta) const override { return k_(eta); }
  double k_dot(double eta) const override { return k_dot_(eta); }
  double k_ddot(double eta) const override { return k_ddot_(eta); }
  double g(double theta) const override { return g_(theta); }
  double g_dot(double theta) const override { return g_dot_(theta); }

 private:
  std::string name_;
  Fn k_, k_dot_, k_ddot_, g_, g_dot_;
};

// Deformed logarithm of order q: (u^{1-q} - 1) / (1 - q), log u at q = 1.
double deformed_log(double u, double q);
// Same quantity from log u, which stays finite when u underflows.
double deformed_log_from_log(double log_u, double q);

double log_density(const Family& family, double y, double theta, double phi);

// J_q(theta) = exp{-q b(theta) + b(q theta)}. Requires q*theta in Theta.
double jq(const Family& family, double theta, double q);

// Log of the escort kernel
//   phi (r(1-q) + q) {y theta - b(theta)} + (r(1-q) + 1) c(y, phi).
// The kernel is not normalized in general; see escort_mass.
double escort_log_density(const Family& family, double y, double theta,
                          double phi, double q, double r);

// Total mass of the escort kernel over the support (summation for discrete
// families, quadrature for continuous ones).
double escort_mass(const Family& family, double theta, double phi, double q,
                   double r);
// Integral of h(y) times the escort kernel over the support.
double escort_integral(const Family& family, double theta, double phi,
                       double q, double r,
                       const std::function<double(double)>& h);

struct QuantileResidual {
  double value;
  // F hit 0 or 1 and was clamped to [1e-12, 1 - 1e-12].
  bool clamped;
};

// Phi^{-1}(F(y; mu, phi)); for discrete families the randomized version
// Phi^{-1}(F(y-) + u {F(y) - F(y-)}) with caller-supplied uniform u.
QuantileResidual quantile_residual_base(const Family& family, double y,
                                        double mu, double phi,
                                        double uniform_draw);

}  // namespace lqglm
