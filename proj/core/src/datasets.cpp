#include "lqglm/datasets.hpp"

#include <array>
#include <cmath>

namespace lqglm::datasets {

namespace {

struct Row {
  double volume, rate, y;
};

// Finney, D. J. (1947), Biometrika 34, 320-334; also the `vaso` data in R's
// robustbase package.
constexpr std::array<Row, 39> kVaso{{
    {3.70, 0.825, 1}, {3.50, 1.090, 1}, {1.25, 2.500, 1}, {0.75, 1.500, 1},
    {0.80, 3.200, 1}, {0.70, 3.500, 1}, {0.60, 0.750, 0}, {1.10, 1.700, 0},
    {0.90, 0.750, 0}, {0.90, 0.450, 0}, {0.80, 0.570, 0}, {0.55, 2.750, 0},
    {0.60, 3.000, 0}, {1.40, 2.330, 1}, {0.75, 3.750, 1}, {2.30, 1.640, 1},
    {3.20, 1.600, 1}, {0.85, 1.415, 1}, {1.70, 1.060, 0}, {1.80, 1.800, 1},
    {0.40, 2.000, 0}, {0.95, 1.360, 0}, {1.35, 1.350, 0}, {1.50, 1.360, 0},
    {1.60, 1.780, 1}, {0.60, 1.500, 0}, {1.80, 1.500, 1}, {0.95, 1.900, 0},
    {1.90, 0.950, 1}, {1.60, 0.400, 0}, {2.70, 0.750, 1}, {2.35, 0.030, 0},
    {1.10, 1.830, 0}, {1.10, 2.200, 1}, {1.20, 2.000, 1}, {0.80, 3.330, 1},
    {0.95, 1.900, 0}, {0.75, 1.900, 0}, {1.30, 1.625, 1},
}};

Vaso build() {
  Vaso v;
  const auto n = static_cast<Eigen::Index>(kVaso.size());
  v.volume.resize(n);
  v.rate.resize(n);
  v.response.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v.volume(i) = kVaso[i].volume;
    v.rate(i) = kVaso[i].rate;
    v.response(i) = kVaso[i].y;
  }
  return v;
}

}  // namespace

const Vaso& vaso() {
  static const Vaso data = build();
  return data;
}

ModelData vaso_model() {
  const Vaso& v = vaso();
  Matrix x(v.volume.size(), 3);
  x.col(0).setOnes();
  x.col(1) = v.volume.array().log().matrix();
  x.col(2) = v.rate.array().log().matrix();
  return ModelData(x, v.response, bernoulli(), canonical_link());
}

}  // namespace lqglm::datasets
