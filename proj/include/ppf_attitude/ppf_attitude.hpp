#pragma once

#include "error.hpp"
#include "so3.hpp"
#include "attitude_repr.hpp"
#include "wahba.hpp"
#include "ppf.hpp"
#include "estimators.hpp"
#include "sensor_sim.hpp"
#include "harness.hpp"
