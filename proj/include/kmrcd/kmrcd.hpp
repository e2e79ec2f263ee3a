#pragma once

#include "kmrcd/estimator.hpp"
#include "kmrcd/initial_estimators.hpp"
#include "kmrcd/io.hpp"
#include "kmrcd/kernel.hpp"
#include "kmrcd/parallel.hpp"
#include "kmrcd/refinement.hpp"
#include "kmrcd/robust_univariate.hpp"
#include "kmrcd/simulation.hpp"
#include "kmrcd/types.hpp"
