#pragma once

#include "errors.hpp"
#include "matrix_path.hpp"
#include "problem.hpp"
#include "riccati.hpp"
#include "equivalence.hpp"
#include "synthesis.hpp"
#include "random.hpp"
#include "simulation.hpp"
#include "examples.hpp"
#include "io.hpp"
#include "verification.hpp"
