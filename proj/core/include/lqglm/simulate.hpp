#pragma once

// Contamination Monte Carlo for Poisson regression with log link.
//
// Replicate k draws everything (covariates, responses, contaminated
// indices) from RngStream(seed, k), so a report does not depend on the
// number of worker threads.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lqglm/estimate.hpp"

namespace lqglm {

// Third-party estimator run on each contaminated data set; returns nullopt
// when it fails.
struct PluginEstimator {
  std::string name;
  std::function<std::optional<Vector>(const ModelData&)> fit;
};

struct SimDesign {
  int n = 400;
  double eps = 0.0;
  double nu = 1.0;
  int reps = 1000;
  std::vector<double> q_list{1.0};
  Vector beta_true = Vector::Ones(3);
  std::uint64_t seed = 1;
  // Prepend a column of ones; beta_true must then include the intercept.
  bool intercept = false;
  // Draw X once (stream id 2^64 - 1) instead of per replicate.
  bool fixed_x = false;
  FitControl control;
  std::vector<PluginEstimator> plugins;
};

struct SimCell {
  std::string estimator;  // "mlq" or a plug-in name
  double q;               // NaN for plug-ins
  double bias;
  double iqr;
  int nonconverged;
  int used;
  Vector mean_estimate;
  // More than 10% of the replicates failed.
  bool unreliable;
};

struct SimReport {
  SimDesign design;
  std::vector<SimCell> cells;
  double runtime_seconds = 0.0;
  bool unreliable() const;
};

ModelData gen_dataset(const SimDesign& design, RngStream& rng);
ModelData gen_dataset(const SimDesign& design, RngStream& rng, const Matrix& x);

struct Contamination {
  Vector y;
  std::vector<Eigen::Index> indices;  // increasing
};

// Multiplies round(eps * n) responses, chosen without replacement, by nu
// and rounds to the nearest integer.
Contamination contaminate(const Vector& y, double eps, double nu, RngStream& rng);

SimReport run_study(const SimDesign& design, int jobs = 1);

// Columns: n, eps, nu, q, bias, iqr, nonconverged.
void write_csv(const SimReport& report, std::ostream& out, bool header = true);

}  // namespace lqglm
