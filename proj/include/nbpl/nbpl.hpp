#pragma once

#include "nbpl/data.hpp"
#include "nbpl/error.hpp"
#include "nbpl/inference.hpp"
#include "nbpl/parallel.hpp"
#include "nbpl/policy.hpp"
#include "nbpl/policy_class.hpp"
#include "nbpl/posterior.hpp"
#include "nbpl/random.hpp"
#include "nbpl/simlab.hpp"
#include "nbpl/solve_result.hpp"
#include "nbpl/solver.hpp"
