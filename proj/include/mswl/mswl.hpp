#pragma once

// Multi-site weighted LASSO: federated feature selection over sites that
// share only feature indices and scalar metrics.

#include "mswl/cohort.hpp"
#include "mswl/common.hpp"
#include "mswl/consensus.hpp"
#include "mswl/message.hpp"
#include "mswl/rng.hpp"
#include "mswl/runner.hpp"
#include "mswl/svm.hpp"
#include "mswl/tabular.hpp"
#include "mswl/transport.hpp"
#include "mswl/wlasso.hpp"
