#pragma once

#include "errors.hpp"
#include "hyperprior.hpp"
#include "linear_model.hpp"
#include "lowess.hpp"
#include "modstats.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "simulation.hpp"
#include "specfun.hpp"
