#pragma once

#include "errors.hpp"
#include "rng.hpp"
#include "mnl.hpp"
#include "pricing.hpp"
#include "geometry.hpp"
#include "estimation.hpp"
#include "policy.hpp"
#include "baselines.hpp"
#include "environment.hpp"
#include "harness.hpp"
