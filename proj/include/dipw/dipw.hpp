#pragma once

#include "dipw/balance.hpp"
#include "dipw/cross_validation.hpp"
#include "dipw/dataset.hpp"
#include "dipw/error.hpp"
#include "dipw/estimators.hpp"
#include "dipw/folds.hpp"
#include "dipw/hte.hpp"
#include "dipw/lasso.hpp"
#include "dipw/logistic_lasso.hpp"
#include "dipw/math.hpp"
#include "dipw/mdipw.hpp"
#include "dipw/propensity.hpp"
#include "dipw/rng.hpp"
#include "dipw/simgen.hpp"
#include "dipw/version.hpp"
