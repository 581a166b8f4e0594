#pragma once

#include "swgee/correlation.hpp"
#include "swgee/csv.hpp"
#include "swgee/efficiency.hpp"
#include "swgee/errors.hpp"
#include "swgee/gee.hpp"
#include "swgee/inference.hpp"
#include "swgee/numeric.hpp"
#include "swgee/oracle.hpp"
#include "swgee/parallel.hpp"
#include "swgee/rng.hpp"
#include "swgee/simulation.hpp"
#include "swgee/trial_data.hpp"
#include "swgee/version.hpp"
