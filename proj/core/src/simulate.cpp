#include "lqglm/simulate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "lqglm/error.hpp"
#include "parallel.hpp"

namespace lqglm {

namespace {

constexpr double kUnreliableShare = 0.10;
constexpr std::uint64_t kFixedXStream = ~std::uint64_t{0};

void validate(const SimDesign& d) {
  if (d.n < 1) throw UsageError("SimDesign: n must be >= 1");
  if (!(d.eps >= 0.0 && d.eps < 1.0)) throw UsageError("SimDesign: eps must lie in [0, 1)");
  if (!(d.nu > 0.0)) throw UsageError("SimDesign: nu must be > 0");
  if (d.reps < 1) throw UsageError("SimDesign: reps must be >= 1");
  if (d.q_list.empty() && d.plugins.empty()) {
    throw UsageError("SimDesign: nothing to fit");
  }
  for (double q : d.q_list) {
    if (!(q > 0.0 && q <= 1.0)) throw UsageError("SimDesign: q values must lie in (0, 1]");
  }
  if (d.beta_true.size() < 1) throw UsageError("SimDesign: beta_true is empty");
}

Matrix draw_x(const SimDesign& d, RngStream& rng) {
  const Eigen::Index p = d.beta_true.size();
  const Eigen::Index first = d.intercept ? 1 : 0;
  Matrix x(d.n, p);
  for (Eigen::Index i = 0; i < d.n; ++i) {
    if (d.intercept) x(i, 0) = 1.0;
    for (Eigen::Index j = first; j < p; ++j) x(i, j) = rng.uniform();
  }
  return x;
}

double iqr(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return at(0.75) - at(0.25);
}

SimCell summarize(const std::string& name, double q,
                  const std::vector<std::optional<Vector>>& est,
                  const Vector& beta_true) {
  SimCell cell{name, q, 0.0, 0.0, 0, 0, Vector::Zero(beta_true.size()), false};
  std::vector<const Vector*> ok;
  for (const auto& e : est) {
    if (e) {
      ok.push_back(&*e);
    } else {
      ++cell.nonconverged;
    }
  }
  cell.used = static_cast<int>(ok.size());
  cell.unreliable = cell.nonconverged > kUnreliableShare * static_cast<double>(est.size());
  if (ok.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    cell.bias = cell.iqr = nan;
    cell.mean_estimate.setConstant(nan);
    return cell;
  }
  for (const Vector* b : ok) cell.mean_estimate += *b;
  cell.mean_estimate /= static_cast<double>(ok.size());
  cell.bias = (cell.mean_estimate - beta_true).norm();
  std::vector<double> column(ok.size());
  double total = 0.0;
  for (Eigen::Index j = 0; j < beta_true.size(); ++j) {
    for (std::size_t k = 0; k < ok.size(); ++k) column[k] = (*ok[k])(j);
    total += iqr(column);
  }
  cell.iqr = total / static_cast<double>(beta_true.size());
  return cell;
}

}  // namespace

bool SimReport::unreliable() const {
  return std::any_of(cells.begin(), cells.end(),
                     [](const SimCell& c) { return c.unreliable; });
}

ModelData gen_dataset(const SimDesign& design, RngStream& rng, const Matrix& x) {
  const Vector eta = x * design.beta_true;
  Vector y(design.n);
  for (Eigen::Index i = 0; i < design.n; ++i) {
    y(i) = static_cast<double>(rng.poisson(std::exp(eta(i))));
  }
  return ModelData(x, y, poisson(), canonical_link());
}

ModelData gen_dataset(const SimDesign& design, RngStream& rng) {
  validate(design);
  const Matrix x = draw_x(design, rng);
  return gen_dataset(design, rng, x);
}

Contamination contaminate(const Vector& y, double eps, double nu, RngStream& rng) {
  if (!(eps >= 0.0)) throw UsageError("contaminate: eps must be >= 0");
  const auto n = y.size();
  const auto m = static_cast<Eigen::Index>(std::llround(eps * static_cast<double>(n)));
  if (m > n) throw UsageError("contaminate: more indices than observations");
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Eigen::Index{0});
  // Partial Fisher-Yates shuffle.
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto span = static_cast<double>(n - k);
    const auto pick = k + std::min(static_cast<Eigen::Index>(rng.uniform() * span), n - k - 1);
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick)]);
  }
  Contamination out{y, std::vector<Eigen::Index>(pool.begin(), pool.begin() + m)};
  std::sort(out.indices.begin(), out.indices.end());
  for (Eigen::Index i : out.indices) out.y(i) = std::round(nu * y(i));
  return out;
}

SimReport run_study(const SimDesign& design, int jobs) {
  validate(design);
  const auto started = std::chrono::steady_clock::now();
  const std::size_t n_q = design.q_list.size();
  const std::size_t n_plug = design.plugins.size();
  const auto reps = static_cast<std::size_t>(design.reps);

  std::optional<Matrix> shared_x;
  if (design.fixed_x) {
    RngStream rng(design.seed, kFixedXStream);
    shared_x = draw_x(design, rng);
  }

  // est[c][k]: estimate of cell c in replicate k.
  std::vector<std::vector<std::optional<Vector>>> est(
      n_q + n_plug, std::vector<std::optional<Vector>>(reps));

  detail::parallel_for(design.reps, jobs, [&](int k) {
    const auto slot = static_cast<std::size_t>(k);
    RngStream rng(design.seed, slot);
    const Matrix x = shared_x ? *shared_x : draw_x(design, rng);
    const ModelData clean = gen_dataset(design, rng, x);
    const Contamination c = contaminate(clean.y(), design.eps, design.nu, rng);
    std::optional<ModelData> data;
    try {
      data.emplace(x, c.y, poisson(), canonical_link());
    } catch (const Error&) {
      return;  // e.g. a rank-deficient design; every cell counts it as failed
    }

    std::optional<FitResult> ml;
    try {
      FitControl ctl = design.control;
      ctl.q = 1.0;
      ml = fit_mlq(*data, ctl);
    } catch (const Error&) {
    }
    for (std::size_t j = 0; j < n_q; ++j) {
      const double q = design.q_list[j];
      try {
        FitResult f;
        if (q == 1.0 && ml) {
          f = *ml;
        } else {
          FitControl ctl = design.control;
          ctl.q = q;
          if (ml) {
            ctl.init = Init::Explicit;
            ctl.start = ml->beta_star / q;
          }
          f = fit_mlq(*data, ctl);
        }
        if (f.converged && f.beta_q) est[j][slot] = *f.beta_q;
      } catch (const Error&) {
      }
    }
    for (std::size_t j = 0; j < n_plug; ++j) {
      try {
        est[n_q + j][slot] = design.plugins[j].fit(*data);
      } catch (const Error&) {
      }
    }
  });

  SimReport report;
  report.design = design;
  for (std::size_t j = 0; j < n_q; ++j) {
    report.cells.push_back(summarize("mlq", design.q_list[j], est[j], design.beta_true));
  }
  for (std::size_t j = 0; j < n_plug; ++j) {
    report.cells.push_back(summarize(design.plugins[j].name,
                                     std::numeric_limits<double>::quiet_NaN(),
                                     est[n_q + j], design.beta_true));
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void write_csv(const SimReport& report, std::ostream& out, bool header) {
  if (header) out << "n,eps,nu,q,bias,iqr,nonconverged\n";
  char buf[256];
  for (const SimCell& c : report.cells) {
    char qbuf[64];
    if (std::isnan(c.q)) {
      std::snprintf(qbuf, sizeof qbuf, "%s", c.estimator.c_str());
    } else {
      std::snprintf(qbuf, sizeof qbuf, "%.4g", c.q);
    }
    std::snprintf(buf, sizeof buf, "%d,%.4g,%.4g,%s,%.10g,%.10g,%d\n", report.design.n,
                  report.design.eps, report.design.nu, qbuf, c.bias, c.iqr,
                  c.nonconverged);
    out << buf;
  }
}

}  // namespace lqglm
