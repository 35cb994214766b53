#pragma once

#include "flowtarget/box_solver.hpp"
#include "flowtarget/core.hpp"
#include "flowtarget/harness.hpp"
#include "flowtarget/instances.hpp"
#include "flowtarget/io.hpp"
#include "flowtarget/lp.hpp"
#include "flowtarget/mle.hpp"
#include "flowtarget/nonstationary.hpp"
#include "flowtarget/oracle.hpp"
#include "flowtarget/policies.hpp"
#include "flowtarget/rng.hpp"
