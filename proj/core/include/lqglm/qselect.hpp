#pragma once

// Choosing the distortion parameter q on a decreasing grid.

#include <string>
#include <vector>

#include "lqglm/estimate.hpp"

namespace lqglm {

class QGrid {
 public:
  // 1 = q_1 > q_2 > ... >= q_min, spaced by step.
  explicit QGrid(double q_min = 0.70, double step = 0.01, double rho_factor = 0.05);
  // Arbitrary strictly decreasing values in (0, 1].
  static QGrid from_values(std::vector<double> values, double rho_factor = 0.05);

  const std::vector<double>& values() const { return values_; }
  double rho_factor() const { return rho_factor_; }

  // Removes every q for which some q * theta_i leaves the natural parameter
  // space; returns the removed values.
  std::vector<double> prune(const Family& family, const Vector& theta);

 private:
  std::vector<double> values_;
  double rho_factor_ = 0.05;
};

enum class QMethod { Stability, Efficiency };

struct QFit {
  double q;
  bool converged;
  // Calibrated coefficients (canonical link) or calibrated predictor / sqrt(n).
  Vector coef;
  double sandwich_trace;
  double are;
  std::string note;
};

struct QSelectResult {
  QMethod method;
  double q_opt;
  // Converged grid values in decreasing order and the fits behind them.
  std::vector<double> q_values;
  std::vector<QFit> fits;
  // qv_profile[j] = |coef_j - coef_{j+1}| over consecutive converged fits.
  std::vector<double> qv_profile;
  double rho = 0.0;
  std::vector<double> pruned;
  std::vector<std::string> warnings;
};

// tr(F_n^{-1}) / tr(B_n^{-1} A_n B_n^{-1}).
double are(const FitResult& fit);

// Walks down the grid from q_1 while successive fits stay within rho of
// each other and returns the q_j at which the first unstable step starts,
// i.e. the smallest q reachable from q_1 through stable steps. When no step
// is unstable there is no sign of contamination and q_1 is returned.
QSelectResult select_q_stability(const ModelData& data, QGrid grid,
                                 const FitControl& control);

// Minimizer of tr(B_n^{-1} A_n B_n^{-1}); ties go to the larger q.
QSelectResult select_q_efficiency(const ModelData& data, QGrid grid,
                                  const FitControl& control);

}  // namespace lqglm
