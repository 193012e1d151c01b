#pragma once

#include "gsbl/array_steering.hpp"
#include "gsbl/baselines.hpp"
#include "gsbl/channel_sim.hpp"
#include "gsbl/config.hpp"
#include "gsbl/harness.hpp"
#include "gsbl/metrics.hpp"
#include "gsbl/offgrid.hpp"
#include "gsbl/snapshot.hpp"
#include "gsbl/vbi.hpp"
