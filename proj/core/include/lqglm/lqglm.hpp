#pragma once

#include "lqglm/datasets.hpp"
#include "lqglm/diagnose.hpp"
#include "lqglm/error.hpp"
#include "lqglm/estimate.hpp"
#include "lqglm/expfam.hpp"
#include "lqglm/numerics.hpp"
#include "lqglm/qselect.hpp"
#include "lqglm/simulate.hpp"
