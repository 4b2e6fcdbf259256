#pragma once

#include "sdm/bounds.hpp"
#include "sdm/clustering.hpp"
#include "sdm/config.hpp"
#include "sdm/core.hpp"
#include "sdm/env.hpp"
#include "sdm/estimators.hpp"
#include "sdm/harness.hpp"
#include "sdm/ingest.hpp"
#include "sdm/logistic.hpp"
#include "sdm/metrics.hpp"
#include "sdm/model.hpp"
#include "sdm/policies.hpp"
#include "sdm/posterior.hpp"
