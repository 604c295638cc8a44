#pragma once

#include "ofl/adjoint.hpp"
#include "ofl/basis.hpp"
#include "ofl/config.hpp"
#include "ofl/core.hpp"
#include "ofl/harness.hpp"
#include "ofl/learn.hpp"
#include "ofl/optimize.hpp"
#include "ofl/problem.hpp"
#include "ofl/reference.hpp"
#include "ofl/simulate.hpp"
