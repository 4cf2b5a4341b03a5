#pragma once

// Dense linear algebra, a golden-section maximizer, reference distributions
// and the seeded random streams used throughout the library.

#include <cstdint>
#include <functional>

#include <Eigen/Dense>

namespace lqglm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
// Construction throws SingularityError with the offending pivot index when
// a pivot is not strictly positive.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& a);

  Matrix solve(const Matrix& b) const;
  Vector solve(const Vector& b) const;
  Matrix inverse() const;
  double log_determinant() const;

  const Matrix& lower() const { return lower_; }
  Eigen::Index size() const { return lower_.rows(); }

 private:
  Matrix lower_;
};

// X with A X = B for symmetric positive-definite A.
Matrix solve_spd(const Matrix& a, const Matrix& b);
Vector solve_spd(const Matrix& a, const Vector& b);
Matrix inverse_spd(const Matrix& a);

// Eigenvalues of a symmetric matrix in increasing order.
Vector symmetric_eigenvalues(const Matrix& a);

bool all_finite(const Matrix& a);

struct Maximum {
  double argmax;
  double value;
};

// Golden-section search on [lo, hi]. The caller guarantees unimodality.
// Throws EvaluationError if f is non-finite at a probe.
Maximum maximize_1d(const std::function<double(double)>& f, double lo,
                    double hi, double tol);

double normal_cdf(double x);
double normal_quantile(double p);
double chi_square_sf(double x, int dof);
double chi_square_quantile(double p, int dof);

// Splittable 64-bit generator (xoshiro256** seeded through SplitMix64).
// Equal (seed, stream_id) pairs give equal sequences. A stream is owned by
// one thread at a time; derive a child stream per task instead of sharing.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()();

  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  std::int64_t poisson(double mean);
  bool bernoulli(double p);

  RngStream child(std::uint64_t id) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t state_[4];
};

}  // namespace lqglm
