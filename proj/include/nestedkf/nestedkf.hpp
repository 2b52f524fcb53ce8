#pragma once

#include "config.hpp"
#include "dynamics.hpp"
#include "errors.hpp"
#include "etkf.hpp"
#include "experiments.hpp"
#include "io.hpp"
#include "nested.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stochastic.hpp"
