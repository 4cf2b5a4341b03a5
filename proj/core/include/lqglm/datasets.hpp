#pragma once

// Bundled example data.

#include "lqglm/estimate.hpp"

namespace lqglm::datasets {

// Finney (1947) vasoconstriction data: 39 trials of air volume, inspiration
// rate and whether reflex vasoconstriction occurred (1) or not (0).
struct Vaso {
  Vector volume;
  Vector rate;
  Vector response;
};

const Vaso& vaso();

// Logistic model with intercept, log(volume) and log(rate).
ModelData vaso_model();

}  // namespace lqglm::datasets
