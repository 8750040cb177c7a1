// Umbrella header.
#pragma once

#include "ccssix/checkpoint.hpp"
#include "ccssix/eval.hpp"
#include "ccssix/fitting.hpp"
#include "ccssix/interpret.hpp"
#include "ccssix/plant.hpp"
#include "ccssix/rollout.hpp"
#include "ccssix/service.hpp"
#include "ccssix/stats.hpp"
#include "ccssix/validity.hpp"
