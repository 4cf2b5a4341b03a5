#include "lqglm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "lqglm/error.hpp"

namespace lqglm {

namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kPivotRelTol = 1e-13;

void check_symmetric(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw UsageError("Cholesky: matrix is " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + ", expected square");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > kSymmetryTol * scale) {
        throw DomainError("Cholesky: matrix is not symmetric at (" +
                          std::to_string(i) + ", " + std::to_string(j) + ")");
      }
    }
  }
}

}  // namespace

Cholesky::Cholesky(const Matrix& a) : lower_(Matrix::Zero(a.rows(), a.cols())) {
  check_symmetric(a);
  if (!all_finite(a)) {
    throw DomainError("Cholesky: matrix has non-finite entries");
  }
  const Eigen::Index n = a.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= lower_(j, k) * lower_(j, k);
    if (!(pivot > kPivotRelTol * std::abs(a(j, j))) || !(pivot > 0.0)) {
      throw SingularityError(
          "Cholesky: non-positive pivot " + std::to_string(pivot) +
              " at index " + std::to_string(j),
          static_cast<std::size_t>(j));
    }
    const double ljj = std::sqrt(pivot);
    lower_(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= lower_(i, k) * lower_(j, k);
      lower_(i, j) = s / ljj;
    }
  }
}

Matrix Cholesky::solve(const Matrix& b) const {
  if (b.rows() != lower_.rows()) {
    throw UsageError("Cholesky::solve: right-hand side has wrong row count");
  }
  Matrix y = lower_.triangularView<Eigen::Lower>().solve(b);
  return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Vector Cholesky::solve(const Vector& b) const {
  if (b.size() != lower_.rows()) {
    throw UsageError("Cholesky::solve: right-hand side has wrong length");
  }
  Vector y = lower_.triangularView<Eigen::Lower>().solve(b);
  return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Matrix Cholesky::inverse() const {
  Matrix inv = solve(Matrix(Matrix::Identity(lower_.rows(), lower_.rows())));
  return 0.5 * (inv + inv.transpose());
}

double Cholesky::log_determinant() const {
  return 2.0 * lower_.diagonal().array().log().sum();
}

Matrix solve_spd(const Matrix& a, const Matrix& b) { return Cholesky(a).solve(b); }

Vector solve_spd(const Matrix& a, const Vector& b) { return Cholesky(a).solve(b); }

Matrix inverse_spd(const Matrix& a) { return Cholesky(a).inverse(); }

Vector symmetric_eigenvalues(const Matrix& a) {
  check_symmetric(a);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a, Eigen::EigenvaluesOnly);
  return solver.eigenvalues();
}

bool all_finite(const Matrix& a) { return a.array().isFinite().all(); }

Maximum maximize_1d(const std::function<double(double)>& f, double lo,
                    double hi, double tol) {
  if (!(lo < hi)) throw UsageError("maximize_1d: requires lo < hi");
  if (!(tol > 0.0)) throw UsageError("maximize_1d: requires tol > 0");

  auto eval = [&f](double x) {
    const double v = f(x);
    if (!std::isfinite(v)) {
      throw EvaluationError("maximize_1d: objective is not finite at x = " +
                                std::to_string(x),
                            x);
    }
    return v;
  };

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo;
  double b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = eval(d);
    }
  }
  const double x = 0.5 * (a + b);
  return {x, eval(x)};
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal_quantile: p must lie in (0, 1), got " +
                      std::to_string(p));
  }
  return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

double chi_square_sf(double x, int dof) {
  if (dof < 1) throw DomainError("chi_square_sf: dof must be >= 1");
  if (!(x >= 0.0)) throw DomainError("chi_square_sf: x must be >= 0");
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

double chi_square_quantile(double p, int dof) {
  if (dof < 1) throw DomainError("chi_square_quantile: dof must be >= 1");
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("chi_square_quantile: p must lie in (0, 1)");
  }
  return boost::math::quantile(boost::math::chi_squared(dof), p);
}

}  // namespace lqglm
