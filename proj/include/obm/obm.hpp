#pragma once

#include "obm/batch_means.hpp"
#include "obm/csv.hpp"
#include "obm/error.hpp"
#include "obm/harness.hpp"
#include "obm/inference.hpp"
#include "obm/linalg.hpp"
#include "obm/markov_data.hpp"
#include "obm/objectives.hpp"
#include "obm/parallel.hpp"
#include "obm/random.hpp"
#include "obm/schedules.hpp"
#include "obm/sgd_engine.hpp"
