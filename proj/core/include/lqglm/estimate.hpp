#pragma once

// Maximum Lq-likelihood fitting for GLMs: objective, estimating function,
// Newton-scoring iterations, calibration back to Fisher consistency and the
// sandwich covariance.
//
// Two coefficient scales appear throughout. The iterations solve the
// estimating equation for the surrogate coefficients beta_star; for a
// canonical link the calibrated (Fisher-consistent) coefficients are
// beta_q = q * beta_star. For other links calibration is defined on the
// linear predictor only, eta_q = g(q k(eta_star)).

#include <optional>
#include <string>
#include <vector>

#include "lqglm/expfam.hpp"
#include "lqglm/numerics.hpp"

namespace lqglm {

// Validated model inputs. Immutable once constructed.
class ModelData {
 public:
  // phi defaults to the family's fixed value (or 1 when it is free).
  // offset, when non-empty, is added to X beta; the library uses it for
  // constrained fits.
  ModelData(Matrix x, Vector y, FamilyPtr family, LinkPtr link,
            std::optional<double> phi = std::nullopt, Vector offset = Vector());

  const Matrix& x() const { return x_; }
  const Vector& y() const { return y_; }
  const Family& family() const { return *family_; }
  const ThetaLink& link() const { return *link_; }
  const FamilyPtr& family_ptr() const { return family_; }
  const LinkPtr& link_ptr() const { return link_; }
  double phi() const { return phi_; }
  const Vector& offset() const { return offset_; }
  Eigen::Index n() const { return x_.rows(); }
  Eigen::Index p() const { return x_.cols(); }

  Vector linear_predictor(const Vector& beta) const;
  ModelData with_phi(double phi) const;

 private:
  Matrix x_;
  Vector y_;
  FamilyPtr family_;
  LinkPtr link_;
  double phi_;
  Vector offset_;
};

enum class Init {
  // Fit q = 1 from the adjusted-response start, then warm-start q < 1 from
  // its surrogate image.
  MaximumLikelihood,
  // Least-squares projection of g(theta(m_i)) with m_i the family's
  // initial mean, e.g. (y + 0.5) / 2 for Bernoulli.
  AdjustedResponse,
  // FitControl::start, on the surrogate scale.
  Explicit,
};

struct FitControl {
  double q = 1.0;
  int max_iter = 100;
  double tol = 1e-8;
  Init init = Init::MaximumLikelihood;
  Vector start;
  int step_halving_max = 20;
  // Alternate beta and phi updates for families with free dispersion.
  bool profile_phi = false;
};

// Per-observation quantities at a surrogate coefficient vector.
struct Observations {
  Vector eta;    // eta_star, including any offset
  Vector theta;  // k(eta_star)
  Vector mu;     // b'(theta)
  Vector v;      // b''(theta)
  Vector kdot;   // k'(eta_star)
  Vector log_f;  // log f(y; theta, phi)
  Vector u;      // f^{1-q}
  Vector w;      // v * kdot^2
  Vector j;      // J_q(theta)^{-phi}
  Vector gk;     // g'(theta) k'(eta_q); 1 for canonical links
};

Observations observe(const ModelData& data, const Vector& beta_star, double q);

struct FitResult {
  double q = 1.0;
  Vector beta_star;
  // Calibrated coefficients; present for canonical links only.
  std::optional<Vector> beta_q;
  Vector eta_star;
  Vector eta_q;
  Vector mu;       // calibrated mean
  Vector mu_star;  // mean at the surrogate
  Vector weights;  // U at the surrogate
  Matrix a_n;
  Matrix b_n;
  Matrix cov;
  // phi X' W X at the calibrated predictor, with q = 1 weights.
  Matrix fisher;
  double lq_value = 0.0;       // L_q at the surrogate
  double lq_calibrated = 0.0;  // L_q at the calibrated predictor
  double phi_hat = 1.0;
  int iterations = 0;
  bool converged = false;
  double psi_norm = 0.0;
  // L_q after every accepted iteration, starting with the start value.
  std::vector<double> trace;
  bool near_indeterminate = false;
  std::string note;

  Vector standard_errors() const;
};

double lq_objective(const ModelData& data, const Vector& beta, double q);
Vector robust_weights(const ModelData& data, const Vector& beta, double q);
Vector estimating_function(const ModelData& data, const Vector& beta, double q);

struct SandwichParts {
  Matrix a_n;
  Matrix b_n;
};
SandwichParts matrices_ab(const ModelData& data, const Vector& beta, double q);

FitResult fit_mlq(const ModelData& data, const FitControl& control);

// Fills every FitResult field at a given surrogate vector without iterating.
FitResult evaluate_at(const ModelData& data, const Vector& beta_star, double q);

// eta_q = g(q k(eta_star)).
Vector calibrate(const ThetaLink& link, const Vector& eta_star, double q);
// beta_q = q beta_star; canonical links only.
Vector calibrate_coefficients(const ThetaLink& link, const Vector& beta_star,
                              double q);

// Maximizer over phi of sum_i l_q(f(y_i; k(x_i' beta), phi)), searched on
// log phi. Throws BracketError when the maximum sits on the bracket edge.
double estimate_phi(const ModelData& data, const Vector& beta, double q);
double estimate_phi_eta(const ModelData& data, const Vector& eta, double q);

// Adjusted-response starting vector.
Vector adjusted_response_start(const ModelData& data);

}  // namespace lqglm
