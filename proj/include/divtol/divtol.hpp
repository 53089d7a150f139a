#pragma once

#include "divtol/core.hpp"
#include "divtol/error.hpp"
#include "divtol/estimator.hpp"
#include "divtol/ingest.hpp"
#include "divtol/rng.hpp"
#include "divtol/simulation.hpp"
