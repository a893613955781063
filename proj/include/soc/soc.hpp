// Everything in one include.
#pragma once

#include "soc/benchmarks.hpp"
#include "soc/core.hpp"
#include "soc/evaluation.hpp"
#include "soc/experiment.hpp"
#include "soc/particle.hpp"
#include "soc/policy.hpp"
#include "soc/scenario_tree.hpp"
#include "soc/validation.hpp"
