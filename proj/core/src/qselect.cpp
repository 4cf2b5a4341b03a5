#include "lqglm/qselect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "lqglm/error.hpp"

namespace lqglm {

namespace {

constexpr int kMinConverged = 3;

std::string fmt_q(double q) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", q);
  return buf;
}

Vector coefficients(const ModelData& data, const FitResult& fit) {
  if (fit.beta_q) return *fit.beta_q;
  return fit.eta_q / std::sqrt(static_cast<double>(data.n()));
}

// Surrogate start for q from a fit at q_prev with the same calibrated
// predictor: eta* = g(k(eta*_prev) q_prev / q).
Vector chain_start(const ModelData& data, const FitResult& prev, double q) {
  Vector eta(prev.eta_star.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    eta(i) = data.link().g(data.link().k(prev.eta_star(i)) * prev.q / q) -
             data.offset()(i);
  }
  const Matrix& x = data.x();
  return solve_spd(Matrix(x.transpose() * x), Vector(x.transpose() * eta));
}

struct GridFits {
  std::vector<FitResult> fits;
  std::vector<double> pruned;
  std::vector<std::string> warnings;
};

GridFits fit_grid(const ModelData& data, QGrid& grid, const FitControl& control) {
  GridFits out;
  FitControl ml = control;
  ml.q = 1.0;
  const FitResult base = fit_mlq(data, ml);
  const Vector theta = base.eta_star.unaryExpr(
      [&](double e) { return data.link().k(e); });
  out.pruned = grid.prune(data.family(), theta);
  for (double q : out.pruned) {
    out.warnings.push_back("q = " + fmt_q(q) + " pruned: q * theta leaves the parameter space");
  }

  out.fits.reserve(grid.values().size());
  const FitResult* prev = &base;
  for (double q : grid.values()) {
    FitControl c = control;
    c.q = q;
    c.init = Init::Explicit;
    c.start = chain_start(data, *prev, q);
    try {
      FitResult f = fit_mlq(data, c);
      if (!f.converged) {
        out.warnings.push_back("q = " + fmt_q(q) + " dropped: " + f.note);
        continue;
      }
      out.fits.push_back(std::move(f));
      prev = &out.fits.back();
    } catch (const Error& e) {
      out.warnings.push_back("q = " + fmt_q(q) + " dropped: " + e.what());
    }
  }
  if (static_cast<int>(out.fits.size()) < kMinConverged &&
      !(grid.values().size() == out.fits.size() && !out.fits.empty())) {
    throw SelectionError("only " + std::to_string(out.fits.size()) +
                         " grid fits converged; at least 3 are needed");
  }
  return out;
}

QSelectResult summarize(const ModelData& data, GridFits&& grid_fits, QMethod method) {
  QSelectResult res;
  res.method = method;
  res.pruned = std::move(grid_fits.pruned);
  res.warnings = std::move(grid_fits.warnings);
  for (const FitResult& f : grid_fits.fits) {
    res.q_values.push_back(f.q);
    QFit s{f.q, f.converged, coefficients(data, f), f.cov.trace(), are(f), f.note};
    res.fits.push_back(std::move(s));
  }
  for (std::size_t j = 0; j + 1 < res.fits.size(); ++j) {
    res.qv_profile.push_back((res.fits[j].coef - res.fits[j + 1].coef).norm());
  }
  return res;
}

}  // namespace

QGrid::QGrid(double q_min, double step, double rho_factor) : rho_factor_(rho_factor) {
  if (!(q_min > 0.0 && q_min <= 1.0)) throw UsageError("QGrid: q_min must lie in (0, 1]");
  if (!(step > 0.0)) throw UsageError("QGrid: step must be > 0");
  if (!(rho_factor > 0.0)) throw UsageError("QGrid: rho_factor must be > 0");
  // Index-based values avoid accumulating rounding error along the grid.
  for (int j = 0;; ++j) {
    const double q = std::round((1.0 - j * step) * 1e12) / 1e12;
    if (q < q_min - 1e-9 || q <= 0.0) break;
    values_.push_back(q);
  }
}

QGrid QGrid::from_values(std::vector<double> values, double rho_factor) {
  if (values.empty()) throw UsageError("QGrid: no values");
  if (!(rho_factor > 0.0)) throw UsageError("QGrid: rho_factor must be > 0");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0 && values[i] <= 1.0)) {
      throw UsageError("QGrid: values must lie in (0, 1]");
    }
    if (i > 0 && !(values[i] < values[i - 1])) {
      throw UsageError("QGrid: values must be strictly decreasing");
    }
  }
  QGrid g(1.0, 1.0, rho_factor);
  g.values_ = std::move(values);
  g.rho_factor_ = rho_factor;
  return g;
}

std::vector<double> QGrid::prune(const Family& family, const Vector& theta) {
  const Interval dom = family.theta_domain();
  std::vector<double> kept;
  std::vector<double> removed;
  for (double q : values_) {
    const bool ok = (q * theta.array()).unaryExpr([&](double t) {
      return dom.contains(t) ? 1.0 : 0.0;
    }).minCoeff() > 0.0;
    (ok ? kept : removed).push_back(q);
  }
  values_ = std::move(kept);
  return removed;
}

double are(const FitResult& fit) {
  const double t = fit.cov.trace();
  return inverse_spd(fit.fisher).trace() / t;
}

QSelectResult select_q_stability(const ModelData& data, QGrid grid,
                                 const FitControl& control) {
  QSelectResult res = summarize(data, fit_grid(data, grid, control), QMethod::Stability);
  res.rho = grid.rho_factor() * res.fits.back().coef.norm();
  res.q_opt = res.q_values.front();
  for (std::size_t j = 0; j < res.qv_profile.size(); ++j) {
    if (!(res.qv_profile[j] < res.rho)) {
      res.q_opt = res.q_values[j];
      break;
    }
  }
  return res;
}

QSelectResult select_q_efficiency(const ModelData& data, QGrid grid,
                                  const FitControl& control) {
  QSelectResult res = summarize(data, fit_grid(data, grid, control), QMethod::Efficiency);
  res.rho = grid.rho_factor() * res.fits.back().coef.norm();
  std::size_t best = 0;
  for (std::size_t j = 1; j < res.fits.size(); ++j) {
    if (res.fits[j].sandwich_trace < res.fits[best].sandwich_trace) best = j;
  }
  res.q_opt = res.q_values[best];
  return res;
}

}  // namespace lqglm
