/*
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include "ddda/common.hpp"
#include "ddda/testbed.hpp"
#include "ddda/var_solver.hpp"
#include "ddda/dd_mps.hpp"
#include "ddda/parareal.hpp"
#include "ddda/analysis.hpp"
#include "ddda/harness.hpp"
