#pragma once

// Inference and diagnostics for MLq fits.
//
// Test statistics use the per-observation scaling A = A_n / n and
// B = B_n / n, under which the Wald, score and bilinear-form statistics are
// all referred to chi-square(d). Hypotheses are stated on the calibrated
// coefficients, so these tests need a canonical link.

#include <cstdint>
#include <string_view>
#include <vector>

#include "lqglm/estimate.hpp"

namespace lqglm {

// H0: H beta = h.
class LinearHypothesis {
 public:
  LinearHypothesis(Matrix h_matrix, Vector h_vector);

  const Matrix& h_matrix() const { return h_; }
  const Vector& h_vector() const { return rhs_; }
  int dof() const { return static_cast<int>(h_.rows()); }

 private:
  Matrix h_;
  Vector rhs_;
};

enum class TestKind { Wald, Score, Bilinear, Deviance };
std::string_view to_string(TestKind kind);

struct TestResult {
  TestKind kind;
  double statistic;
  int dof;
  double p_value;
};

// 2 {L_q(alternative) - L_q(null)} at the calibrated predictors, clamped
// at 0.
double deviance_q(const ModelData& data, const FitResult& fit_null,
                  const FitResult& fit_alt);

// -2 L_q(calibrated) + 2 tr(B_n^{-1} A_n).
double aic_q(const ModelData& data, const FitResult& fit);

// MLq fit under H0, via beta_star = beta0 + N gamma with N spanning the
// null space of H and H beta0 = h / q. The result is expressed in the full
// parameterization.
FitResult fit_constrained(const ModelData& data, const LinearHypothesis& hyp,
                          const FitControl& control);

TestResult wald_test(const FitResult& fit, const LinearHypothesis& hyp);
TestResult score_test(const ModelData& data, const LinearHypothesis& hyp,
                      const FitControl& control);
TestResult score_test(const FitResult& constrained, const ModelData& data,
                      const LinearHypothesis& hyp);
TestResult bf_test(const ModelData& data, const FitResult& fit,
                   const LinearHypothesis& hyp, const FitControl& control);
TestResult bf_test(const FitResult& fit, const FitResult& constrained,
                   const ModelData& data, const LinearHypothesis& hyp);

// Score statistic for adding the column z to the null fit.
TestResult added_variable_score(const ModelData& data, const FitResult& fit_null,
                                const Vector& z);

struct ResidualSet {
  Vector values;
  // Standardized: negative variance term, value is NaN.
  // Quantile: the CDF was clamped away from 0 or 1.
  std::vector<bool> flagged;
};

ResidualSet standardized_residuals(const ModelData& data, const FitResult& fit);
Vector deviance_residuals(const ModelData& data, const FitResult& fit);
// Randomized for discrete families; draws one uniform per observation.
ResidualSet quantile_residuals(const ModelData& data, const FitResult& fit,
                               RngStream& rng);

enum class ResidualType { Standardized, Deviance, Quantile };
std::string_view to_string(ResidualType type);
ResidualType residual_type_from(std::string_view name);

// Influence function of the calibrated estimator at (y_new, x_new).
Vector influence_fn(const ModelData& data, const FitResult& fit, double y_new,
                    const Vector& x_new);

// Parametric-bootstrap envelope for a normal QQ plot of the residuals.
struct Envelope {
  ResidualType type;
  Vector expected;   // normal scores, increasing
  Vector observed;   // sorted residuals of the fit
  std::vector<Eigen::Index> order;  // observation index behind each sorted value
  Vector lower;      // pointwise 2.5%
  Vector median;
  Vector upper;      // pointwise 97.5%
  int replicates = 0;
  int failed = 0;    // replicates whose refit failed and were skipped
};

Envelope simulate_envelope(const ModelData& data, const FitResult& fit,
                           const FitControl& control, ResidualType type,
                           int replicates, std::uint64_t seed, int jobs = 1);

}  // namespace lqglm
