#pragma once

#include "bdsp/data.hpp"
#include "bdsp/dataset.hpp"
#include "bdsp/errors.hpp"
#include "bdsp/experiment.hpp"
#include "bdsp/federation.hpp"
#include "bdsp/ledger.hpp"
#include "bdsp/model.hpp"
#include "bdsp/parallel.hpp"
#include "bdsp/random.hpp"
#include "bdsp/selection.hpp"
#include "bdsp/types.hpp"
#include "bdsp/valuation.hpp"
